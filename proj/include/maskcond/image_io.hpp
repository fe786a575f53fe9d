#pragma once

#include <string>

#include "maskcond/tensor.hpp"

namespace maskcond {

/// 8-bit grayscale or RGB PNG to a (C, H, W) tensor in [0, 1].
Tensor read_png(const std::string& path);
/// (C, H, W) tensor in [0, 1] with C = 1 or 3; values are clamped and rounded.
void write_png(const std::string& path, const Tensor& image);

}  // namespace maskcond
