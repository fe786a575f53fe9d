#include <iostream>

#include "maskcond/cli.hpp"

int main(int argc, char** argv) { return maskcond::cli::run(argc, argv, std::cout, std::cerr); }
