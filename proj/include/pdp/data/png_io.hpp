#pragma once

#include <string>

#include "pdp/core/tensor.hpp"

namespace pdp::data {

// 8-bit RGB image I/O. Tensors are (3, h, w) with values in [0,1]; writing
// clamps and rounds, reading divides by 255.
void write_png_rgb(const std::string& path, const Tensor& image);
Tensor read_png_rgb(const std::string& path);

// Binary masks as 8-bit grayscale PNGs: 1 -> 255, 0 -> 0; reading thresholds
// at 128. Tensors are (h, w).
void write_png_mask(const std::string& path, const Tensor& mask);
Tensor read_png_mask(const std::string& path);

}  // namespace pdp::data
