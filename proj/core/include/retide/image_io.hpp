#pragma once

#include <string>

#include "retide/tensor.hpp"

namespace retide {

// 8-bit PNG in and out (grayscale or RGB). Values map to [0,1] planar floats.
// 16-bit, palette and alpha inputs are converted on read; writes are always
// 8-bit gray (c == 1) or RGB (c == 3).
TensorF32 read_png(const std::string& path);
void write_png(const std::string& path, const TensorF32& img);

} // namespace retide
