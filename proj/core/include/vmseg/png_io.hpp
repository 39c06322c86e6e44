#pragma once

#include <string>

#include "vmseg/tensor.hpp"

namespace vmseg {

// 8-bit PNG round trip for [3,h,w] images and [h,w] grayscale maps with
// values in [0,1]. Writers quantize with round(v*255) after clamping;
// readers divide by 255. Reading promotes palette/16-bit/alpha variants
// to plain 8-bit first and reports channel count via the returned shape.

void write_png_rgb(const std::string& path, const Tensor<float>& image);
void write_png_gray(const std::string& path, const Tensor<float>& map);

// [3,h,w] or [1,h,w] float tensor depending on the file's color type.
Tensor<float> read_png(const std::string& path);

}  // namespace vmseg
