#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "utr/discriminator.hpp"
#include "utr/geometry.hpp"
#include "utr/losses.hpp"
#include "utr/swin.hpp"

namespace utr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimizerSettings {
  double lr_generator = 1e-4;
  double lr_discriminator = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct TrainConfig {
  OutpaintGeometry geometry{32, 32, 8, 4};
  double fill = 0.0;
  BackboneConfig model;
  DiscriminatorConfig discriminator;
  LossWeights weights;
  MrfSettings mrf;
  std::uint64_t extractor_seed = 7;
  std::string extractor_weights;
  OptimizerSettings optimizer;
  std::int64_t batch_size = 4;
  std::int64_t steps = 2000;
  std::uint64_t seed = 42;
  bool deterministic = true;
  std::int64_t checkpoint_interval = 500;
  bool freeze_discriminator = false;

  /// Fills derived fields and checks every invariant. Throws ConfigError.
  void validate();

  std::string to_yaml() const;
  static TrainConfig from_yaml(const std::string& text);
  static TrainConfig from_file(const std::string& path);
};

/// Desk-scale default: 48x48 images, 32x32 center, 8-pixel margin.
TrainConfig toy_config();
/// 192x192 images, 128x128 center, 32-pixel margin, Swin-T sized backbone.
TrainConfig full_config();

}  // namespace utr
