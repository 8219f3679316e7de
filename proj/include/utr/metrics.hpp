#pragma once

#include <cstdint>
#include <vector>

#include "utr/geometry.hpp"
#include "utr/tensor.hpp"

namespace utr {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) for images in [0, 1]. Identical inputs give +infinity.
double psnr(const Tensor& a, const Tensor& b);
/// PSNR over the pixels where `mask` is nonzero (one entry per pixel, all
/// channels included).
double psnr_masked(const Tensor& a, const Tensor& b, const std::vector<std::uint8_t>& mask);
/// Value written to reports: +infinity is replaced by kPsnrCap.
double psnr_for_report(double db);

struct SsimSettings {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Gaussian-window SSIM on (H, W, C) or (1, H, W, C) images in [0, 1],
/// averaged over channels and all valid window positions.
double ssim(const Tensor& a, const Tensor& b, const SsimSettings& s = {});
/// Per-pixel SSIM map (H - w + 1, W - w + 1, C) before averaging.
Tensor ssim_map(const Tensor& a, const Tensor& b, const SsimSettings& s = {});
/// Mean of the SSIM map over windows whose center pixel lies in `mask`.
double ssim_masked(const Tensor& a, const Tensor& b, const std::vector<std::uint8_t>& mask,
                   const SsimSettings& s = {});

}  // namespace utr
