#include <doctest.h>

#include "utr/geometry.hpp"
#include "utr/rng.hpp"

using namespace utr;

TEST_CASE("full-size setup maps to a 6x6 bottleneck with a 4x4 center") {
  const OutpaintGeometry g{128, 128, 32, 32};
  CHECK(g.full_h() == 192);
  CHECK(g.full_w() == 192);
  const FeatureGrid f = feature_grid(g);
  CHECK(f.grid_h == 6);
  CHECK(f.grid_w == 6);
  CHECK(f.center_h == 4);
  CHECK(f.center_w == 4);
  CHECK(f.ring == 1);
}

TEST_CASE("desk setup: 48x48 image, 32 center, downsample 4") {
  const FeatureGrid f = feature_grid(OutpaintGeometry{32, 32, 8, 4});
  CHECK(f.grid_h == 12);
  CHECK(f.center_h == 8);
  CHECK(f.ring == 2);
}

TEST_CASE("grid size equals center plus two rings for random valid geometries") {
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const std::int64_t d = rng.uniform_int(1, 16);
    const OutpaintGeometry g{d * rng.uniform_int(1, 10), d * rng.uniform_int(1, 10), d * rng.uniform_int(0, 5), d};
    const FeatureGrid f = feature_grid(g);
    CHECK(f.grid_h == f.center_h + 2 * f.ring);
    CHECK(f.grid_w == f.center_w + 2 * f.ring);
  }
}

TEST_CASE("misaligned sizes are rejected") {
  CHECK_THROWS_AS((OutpaintGeometry{128, 128, 30, 32}.validate()), GeometryError);
  CHECK_THROWS_AS((OutpaintGeometry{100, 128, 32, 32}.validate()), GeometryError);
  CHECK_THROWS_AS((OutpaintGeometry{0, 128, 32, 32}.validate()), GeometryError);
  CHECK_THROWS_AS((OutpaintGeometry{32, 32, -1, 1}.validate()), GeometryError);
}

TEST_CASE("zero margin degenerates to the center") {
  const OutpaintGeometry g{32, 32, 0, 4};
  CHECK(feature_grid(g).ring == 0);
  CHECK(g.full_h() == 32);
}

TEST_CASE("multi-step geometry grows the margin linearly") {
  const OutpaintGeometry g{128, 128, 32, 32};
  CHECK(g.with_steps(2).full_h() == 256);
  CHECK(g.with_steps(1).full_h() == 192);
  CHECK_THROWS_AS(g.with_steps(0), GeometryError);
}

TEST_CASE("masking fills exactly the ring and keeps the center") {
  const OutpaintGeometry g{4, 6, 2, 1};
  Tensor gt({1, 8, 10, 3});
  for (std::int64_t i = 0; i < gt.numel(); ++i) gt[i] = 0.001 * static_cast<double>(i);
  const MaskedSample s = make_masked_input(gt, g, -1.0);
  int ring = 0;
  for (std::int64_t y = 0; y < 8; ++y)
    for (std::int64_t x = 0; x < 10; ++x) {
      const bool center = y >= 2 && y < 6 && x >= 2 && x < 8;
      CHECK(s.mask[static_cast<std::size_t>(y * 10 + x)] == (center ? 0 : 1));
      ring += center ? 0 : 1;
      for (std::int64_t c = 0; c < 3; ++c) {
        CHECK(s.masked_image.at(0, y, x, c) == (center ? gt.at(0, y, x, c) : -1.0));
        CHECK(s.ground_truth.at(0, y, x, c) == gt.at(0, y, x, c));
      }
    }
  CHECK(ring == 80 - 24);
  CHECK_THROWS_AS(make_masked_input(Tensor({1, 9, 10, 3}), g), GeometryError);
}

TEST_CASE("crop and embed are inverse on the center") {
  const OutpaintGeometry g{4, 4, 2, 2};
  Rng rng(3);
  const Tensor c = rng.normal_tensor({2, 4, 4, 3}, 1.0);
  const Tensor full = embed_center(c, g, 0.25);
  CHECK(full.dim(1) == 8);
  CHECK(full.at(1, 0, 0, 2) == 0.25);
  CHECK(crop_center(full, g).storage() == c.storage());
}

TEST_CASE("center region at feature levels") {
  const OutpaintGeometry g{128, 128, 32, 32};
  const Region r = center_region(g, 4);
  CHECK(r.top == 8);
  CHECK(r.left == 8);
  CHECK(r.height == 32);
  CHECK(r.contains(8, 39));
  CHECK_FALSE(r.contains(40, 8));
  CHECK_THROWS_AS(center_region(g, 64), GeometryError);
}
