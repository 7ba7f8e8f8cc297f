#pragma once

#include <filesystem>

#include "agmtr/tensor.hpp"

namespace agmtr {

/// 8-bit PNG → H×W×3 in [0,1]. Gray, palette and alpha inputs are converted.
Tensor read_png_rgb(const std::filesystem::path& path);
/// Values are clamped to [0,1] and rounded to 8 bits.
void write_png_rgb(const std::filesystem::path& path, const Tensor& image);

/// Any nonzero pixel (first channel) is foreground.
BinaryMask read_png_mask(const std::filesystem::path& path);
/// Gray PNG with 0 / 255.
void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask);

}  // namespace agmtr
