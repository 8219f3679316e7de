#include "utr/geometry.hpp"

#include <string>

namespace utr {

void OutpaintGeometry::validate() const {
  if (h <= 0 || w <= 0) throw GeometryError("center size must be positive");
  if (m < 0) throw GeometryError("margin must be non-negative");
  if (downsample <= 0) throw GeometryError("downsample must be positive");
  auto check = [this](std::int64_t v, const char* name) {
    if (v % downsample != 0) {
      throw GeometryError(std::string(name) + " = " + std::to_string(v) + " is not divisible by downsample " +
                          std::to_string(downsample));
    }
  };
  check(h, "h");
  check(w, "w");
  check(m, "m");
  check(full_h(), "h'");
  check(full_w(), "w'");
}

OutpaintGeometry OutpaintGeometry::with_steps(std::int64_t steps) const {
  if (steps < 1) throw GeometryError("step count must be >= 1");
  OutpaintGeometry g = *this;
  g.m = m * steps;
  return g;
}

FeatureGrid feature_grid(const OutpaintGeometry& geom) {
  geom.validate();
  FeatureGrid f;
  f.grid_h = geom.full_h() / geom.downsample;
  f.grid_w = geom.full_w() / geom.downsample;
  f.center_h = geom.h / geom.downsample;
  f.center_w = geom.w / geom.downsample;
  f.ring = geom.m / geom.downsample;
  return f;
}

Region center_region(const OutpaintGeometry& geom, std::int64_t level_downsample) {
  if (level_downsample <= 0 || geom.h % level_downsample || geom.w % level_downsample ||
      geom.m % level_downsample) {
    throw GeometryError("center region not aligned at downsample " + std::to_string(level_downsample));
  }
  return Region{geom.m / level_downsample, geom.m / level_downsample, geom.h / level_downsample,
                geom.w / level_downsample};
}

MaskedSample make_masked_input(const Tensor& ground_truth, const OutpaintGeometry& geom, double fill) {
  geom.validate();
  const Shape expected{1, geom.full_h(), geom.full_w(), 3};
  if (ground_truth.shape() != expected) {
    throw GeometryError("ground truth shape " + shape_str(ground_truth.shape()) + " does not match geometry " +
                        shape_str(expected));
  }
  MaskedSample s;
  s.ground_truth = ground_truth;
  s.masked_image = ground_truth;
  s.mask.assign(static_cast<std::size_t>(geom.full_h() * geom.full_w()), 0);
  const Region center = center_region(geom, 1);
  for (std::int64_t y = 0; y < geom.full_h(); ++y) {
    for (std::int64_t x = 0; x < geom.full_w(); ++x) {
      if (center.contains(y, x)) continue;
      s.mask[static_cast<std::size_t>(y * geom.full_w() + x)] = 1;
      for (std::int64_t c = 0; c < 3; ++c) s.masked_image.at(0, y, x, c) = fill;
    }
  }
  return s;
}

Tensor crop_center(const Tensor& full, const OutpaintGeometry& geom) {
  if (full.rank() != 4 || full.dim(1) != geom.full_h() || full.dim(2) != geom.full_w()) {
    throw GeometryError("crop_center: tensor " + shape_str(full.shape()) + " does not match geometry");
  }
  const std::int64_t b = full.dim(0), c = full.dim(3);
  Tensor out(Shape{b, geom.h, geom.w, c});
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t y = 0; y < geom.h; ++y)
      for (std::int64_t x = 0; x < geom.w; ++x)
        for (std::int64_t k = 0; k < c; ++k) out.at(n, y, x, k) = full.at(n, y + geom.m, x + geom.m, k);
  return out;
}

Tensor embed_center(const Tensor& center, const OutpaintGeometry& geom, double fill) {
  if (center.rank() != 4 || center.dim(1) != geom.h || center.dim(2) != geom.w) {
    throw GeometryError("embed_center: tensor " + shape_str(center.shape()) + " does not match center " +
                        std::to_string(geom.h) + "x" + std::to_string(geom.w));
  }
  const std::int64_t b = center.dim(0), c = center.dim(3);
  Tensor out(Shape{b, geom.full_h(), geom.full_w(), c}, fill);
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t y = 0; y < geom.h; ++y)
      for (std::int64_t x = 0; x < geom.w; ++x)
        for (std::int64_t k = 0; k < c; ++k) out.at(n, y + geom.m, x + geom.m, k) = center.at(n, y, x, k);
  return out;
}

}  // namespace utr
