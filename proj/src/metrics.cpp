#include "utr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace utr {

namespace {

// Views (H, W, C) and (1, H, W, C) tensors as (H, W, C).
Shape image_shape(const Tensor& t, const char* what) {
  const Shape& s = t.shape();
  if (s.size() == 3) return s;
  if (s.size() == 4 && s[0] == 1) return Shape{s[1], s[2], s[3]};
  throw ShapeError(std::string(what) + ": expected (H, W, C) or (1, H, W, C), got " + shape_str(s));
}

double mse_to_db(double mse) {
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// "Valid" separable filter of one channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& k) {
  const auto n = static_cast<std::int64_t>(k.size());
  const std::int64_t oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h * ow), 0.0);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * plane[static_cast<std::size_t>(y * w + x + i)];
      tmp[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow), 0.0);
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>((y + i) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  if (a.numel() == 0) throw ShapeError("psnr: empty images");
  double sum = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return mse_to_db(sum / static_cast<double>(a.numel()));
}

double psnr_masked(const Tensor& a, const Tensor& b, const std::vector<std::uint8_t>& mask) {
  require_same_shape(a.shape(), b.shape(), "psnr_masked");
  const Shape s = image_shape(a, "psnr_masked");
  if (static_cast<std::int64_t>(mask.size()) != s[0] * s[1]) throw ShapeError("psnr_masked: mask size mismatch");
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::int64_t p = 0; p < s[0] * s[1]; ++p) {
    if (!mask[static_cast<std::size_t>(p)]) continue;
    for (std::int64_t c = 0; c < s[2]; ++c) {
      const double d = a[p * s[2] + c] - b[p * s[2] + c];
      sum += d * d;
      ++count;
    }
  }
  if (count == 0) throw ShapeError("psnr_masked: empty mask");
  return mse_to_db(sum / static_cast<double>(count));
}

double psnr_for_report(double db) { return std::isfinite(db) ? std::min(db, kPsnrCap) : kPsnrCap; }

Tensor ssim_map(const Tensor& a, const Tensor& b, const SsimSettings& s) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  const Shape sh = image_shape(a, "ssim");
  const std::int64_t h = sh[0], w = sh[1], ch = sh[2];
  if (h < s.window || w < s.window) {
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                     std::to_string(s.window) + "-pixel window");
  }
  const auto k = gaussian_kernel(s.window, s.sigma);
  const double c1 = s.k1 * s.k1, c2 = s.k2 * s.k2;  // dynamic range 1
  const std::int64_t oh = h - s.window + 1, ow = w - s.window + 1;
  Tensor out(Shape{oh, ow, ch});
  std::vector<double> pa(static_cast<std::size_t>(h * w)), pb(pa.size()), aa(pa.size()), bb(pa.size()), ab(pa.size());
  for (std::int64_t c = 0; c < ch; ++c) {
    for (std::int64_t p = 0; p < h * w; ++p) {
      const double x = a[p * ch + c], y = b[p * ch + c];
      const auto i = static_cast<std::size_t>(p);
      pa[i] = x;
      pb[i] = y;
      aa[i] = x * x;
      bb[i] = y * y;
      ab[i] = x * y;
    }
    const auto mu_a = filter_valid(pa, h, w, k), mu_b = filter_valid(pb, h, w, k);
    const auto e_aa = filter_valid(aa, h, w, k), e_bb = filter_valid(bb, h, w, k), e_ab = filter_valid(ab, h, w, k);
    for (std::int64_t p = 0; p < oh * ow; ++p) {
      const auto i = static_cast<std::size_t>(p);
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      out[p * ch + c] = ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                        ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
  }
  return out;
}

double ssim(const Tensor& a, const Tensor& b, const SsimSettings& s) {
  const Tensor m = ssim_map(a, b, s);
  double sum = 0.0;
  for (std::int64_t i = 0; i < m.numel(); ++i) sum += m[i];
  return sum / static_cast<double>(m.numel());
}

double ssim_masked(const Tensor& a, const Tensor& b, const std::vector<std::uint8_t>& mask, const SsimSettings& s) {
  const Shape sh = image_shape(a, "ssim_masked");
  if (static_cast<std::int64_t>(mask.size()) != sh[0] * sh[1]) throw ShapeError("ssim_masked: mask size mismatch");
  const Tensor m = ssim_map(a, b, s);
  const std::int64_t oh = m.dim(0), ow = m.dim(1), ch = m.dim(2), half = s.window / 2;
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      if (!mask[static_cast<std::size_t>((y + half) * sh[1] + x + half)]) continue;
      for (std::int64_t c = 0; c < ch; ++c) sum += m[(y * ow + x) * ch + c];
      count += ch;
    }
  if (count == 0) throw ShapeError("ssim_masked: no window centers inside the mask");
  return sum / static_cast<double>(count);
}

}  // namespace utr
