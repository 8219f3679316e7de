#pragma once

#include <vector>

#include "utr/layers.hpp"

namespace utr {

struct DiscriminatorConfig {
  std::int64_t base_channels = 32;
  int layers = 5;
  double leaky_slope = 0.2;
};

/// Strided 4x4 convolutions (each halves resolution, channels double from
/// `base_channels`) with LeakyReLU, then a linear head to one score.
struct DiscriminatorParams {
  ParamSet params;
  std::vector<Conv2d> convs;
  Linear head;
  double leaky_slope = 0.2;
  std::int64_t input_h = 0;
  std::int64_t input_w = 0;

  DiscriminatorParams() = default;
  DiscriminatorParams(DiscriminatorParams&&) = default;
  DiscriminatorParams& operator=(DiscriminatorParams&&) = default;
  DiscriminatorParams(const DiscriminatorParams&) = delete;
  DiscriminatorParams& operator=(const DiscriminatorParams&) = delete;
};

DiscriminatorParams make_discriminator(const DiscriminatorConfig& cfg, std::int64_t input_h, std::int64_t input_w,
                                       Rng& rng);

/// (B, H, W, 3) -> (B) unbounded scores.
Var discriminator_forward(const DiscriminatorParams& d, const Var& image);

}  // namespace utr
