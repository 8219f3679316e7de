#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "utr/tensor.hpp"

namespace utr {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Center size, per-side margin and the encoder's total spatial reduction.
/// The full (outpainted) size is center + 2 * margin on each axis.
struct OutpaintGeometry {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t m = 0;
  std::int64_t downsample = 1;

  std::int64_t full_h() const { return h + 2 * m; }
  std::int64_t full_w() const { return w + 2 * m; }

  /// Throws GeometryError if any size does not map to whole feature cells.
  void validate() const;

  /// Geometry after `steps` rounds of extrapolation (margin grows linearly).
  OutpaintGeometry with_steps(std::int64_t steps) const;
};

struct FeatureGrid {
  std::int64_t grid_h = 0;
  std::int64_t grid_w = 0;
  std::int64_t center_h = 0;
  std::int64_t center_w = 0;
  std::int64_t ring = 0;
};

FeatureGrid feature_grid(const OutpaintGeometry& geom);

/// Axis-aligned block inside an (H, W) map.
struct Region {
  std::int64_t top = 0;
  std::int64_t left = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;

  bool contains(std::int64_t y, std::int64_t x) const {
    return y >= top && y < top + height && x >= left && x < left + width;
  }
};

/// Center block of the geometry at a level with the given cumulative
/// downsample factor (1 = pixel space).
Region center_region(const OutpaintGeometry& geom, std::int64_t level_downsample);

struct MaskedSample {
  Tensor masked_image;    // (1, h', w', 3)
  Tensor ground_truth;    // (1, h', w', 3)
  std::vector<std::uint8_t> mask;  // h' * w', 1 = to be predicted
};

MaskedSample make_masked_input(const Tensor& ground_truth, const OutpaintGeometry& geom, double fill = 0.0);

/// Copies the center h x w block of a (B, h', w', C) tensor.
Tensor crop_center(const Tensor& full, const OutpaintGeometry& geom);

/// Places a (B, h, w, C) center into a (B, h', w', C) canvas filled with `fill`.
Tensor embed_center(const Tensor& center, const OutpaintGeometry& geom, double fill);

}  // namespace utr
