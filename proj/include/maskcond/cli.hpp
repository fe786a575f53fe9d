#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "maskcond/conditions.hpp"

namespace maskcond::cli {

/// Exit codes: 0 success, 1 usage error, 2 runtime error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// `name=value` pairs in raw units; features not mentioned (or given an
/// empty value) are masked.
ConditionVector parse_condition_assignments(const ConditionSchema& schema, const std::vector<std::string>& assignments);

}  // namespace maskcond::cli
