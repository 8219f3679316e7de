#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "utr/tensor.hpp"

namespace utr {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit interleaved RGB.
struct Image8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Decodes PNG or JPEG (by content); alpha and grayscale become RGB.
Image8 read_image(const std::string& path);
void write_png(const std::string& path, const Image8& image);

/// (1, H, W, 3) tensor with values 2 * (v / 255) - 1.
Tensor image_to_tensor(const Image8& image);
/// Batch item `index` of a (B, H, W, 3) tensor in [-1, 1], rounded to 8 bits.
Image8 tensor_to_image(const Tensor& t, std::int64_t index = 0);

/// Bilinear resampling of a (B, H, W, C) tensor with half-pixel centers.
Tensor resize_bilinear(const Tensor& t, std::int64_t out_h, std::int64_t out_w);

/// Maps [-1, 1] to [0, 1] elementwise, clamped.
Tensor to_unit_range(const Tensor& t);

bool has_image_extension(const std::string& path);

}  // namespace utr
