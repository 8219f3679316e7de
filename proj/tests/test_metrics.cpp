#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "utr/metrics.hpp"
#include "utr/rng.hpp"
#include "utr/selfcheck.hpp"

using namespace utr;

TEST_CASE("PSNR of a constant offset") {
  const Tensor a(Shape{4, 4, 3}, 0.5), b(Shape{4, 4, 3}, 0.6);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));  // MSE 0.01
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr_for_report(psnr(a, a)) == kPsnrCap);
  CHECK(psnr_for_report(31.5) == 31.5);
  CHECK_THROWS_AS(psnr(a, Tensor(Shape{4, 4, 1})), ShapeError);
}

TEST_CASE("masked PSNR only counts masked pixels") {
  Tensor a(Shape{1, 2, 2, 3}, 0.0), b(Shape{1, 2, 2, 3}, 0.0);
  for (int c = 0; c < 3; ++c) b[c] = 0.1;      // pixel 0 differs
  for (int c = 0; c < 3; ++c) b[9 + c] = 1.0;  // pixel 3 differs a lot
  CHECK(psnr_masked(a, b, {1, 1, 0, 0}) == doctest::Approx(10 * std::log10(1.0 / 0.005)));
  CHECK_THROWS_AS(psnr_masked(a, b, {0, 0, 0, 0}), ShapeError);
  CHECK_THROWS_AS(psnr_masked(a, b, {1, 1}), ShapeError);
}

TEST_CASE("PSNR matches the two-pass oracle") {
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const Tensor a = rng.uniform_tensor({9, 7, 3}, 0, 1), b = rng.uniform_tensor({9, 7, 3}, 0, 1);
    CHECK(psnr(a, b) == doctest::Approx(selfcheck::psnr_two_pass(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("SSIM is one on identical images and matches the direct-window oracle") {
  Rng rng(2);
  const Tensor a = rng.uniform_tensor({20, 18, 3}, 0, 1);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  for (int i = 0; i < 5; ++i) {
    const Tensor x = rng.uniform_tensor({16, 16, 3}, 0, 1), y = rng.uniform_tensor({16, 16, 3}, 0, 1);
    CHECK(std::abs(ssim(x, y) - selfcheck::ssim_direct(x, y)) <= 1e-9);
  }
}

TEST_CASE("SSIM map shape, symmetry and window guard") {
  Rng rng(3);
  const Tensor a = rng.uniform_tensor({1, 15, 13, 3}, 0, 1), b = rng.uniform_tensor({1, 15, 13, 3}, 0, 1);
  CHECK(ssim_map(a, b).shape() == Shape{5, 3, 3});
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  CHECK(ssim(a, b) < 1.0);
  CHECK_THROWS_AS(ssim(Tensor(Shape{8, 8, 3}), Tensor(Shape{8, 8, 3})), ShapeError);
}

TEST_CASE("masked SSIM averages windows centred in the mask") {
  Rng rng(4);
  const Tensor a = rng.uniform_tensor({13, 13, 1}, 0, 1), b = rng.uniform_tensor({13, 13, 1}, 0, 1);
  std::vector<std::uint8_t> mask(169, 0);
  mask[5 * 13 + 5] = 1;  // center of the (0, 0) window of the 3x3 map
  CHECK(ssim_masked(a, b, mask) == doctest::Approx(ssim_map(a, b)[0]).epsilon(1e-12));
  std::fill(mask.begin(), mask.end(), 1);
  CHECK(ssim_masked(a, b, mask) == doctest::Approx(ssim(a, b)).epsilon(1e-12));
  std::fill(mask.begin(), mask.end(), 0);
  mask[0] = 1;
  CHECK_THROWS_AS(ssim_masked(a, b, mask), ShapeError);
}

TEST_CASE("SSIM of an image against its negative is low; equal constants give one") {
  Rng rng(5);
  Tensor x = rng.uniform_tensor({24, 24, 3}, 0.25, 0.75), neg = x;
  for (auto& v : neg.storage()) v = 1.0 - v;
  CHECK(ssim(x, neg) < 0.5);
  CHECK(ssim(x, neg) == doctest::Approx(selfcheck::ssim_direct(x, neg)).epsilon(1e-9));
  const Tensor c(Shape{12, 12, 3}, 0.3);
  CHECK(ssim(c, c) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("metrics are symmetric and PSNR falls as noise grows") {
  Rng rng(6);
  const Tensor base = rng.uniform_tensor({16, 16, 3}, 0.2, 0.8);
  const Tensor noise = rng.normal_tensor({16, 16, 3}, 1.0);
  double prev = std::numeric_limits<double>::infinity();
  for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    Tensor noisy = base;
    for (std::int64_t i = 0; i < noisy.numel(); ++i) noisy[i] += amp * noise[i];
    const double p = psnr(base, noisy);
    CHECK(p < prev);
    prev = p;
    CHECK(std::abs(psnr(base, noisy) - psnr(noisy, base)) <= 1e-9);
    CHECK(std::abs(ssim(base, noisy) - ssim(noisy, base)) <= 1e-9);
  }
}
