#pragma once

#include <map>
#include <string>

#include "utr/layers.hpp"

namespace utr {

struct AdamSettings {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam over a ParamSet. Parameters without an accumulated gradient are
/// treated as having a zero gradient. Parameters and moments are rounded to
/// float32 after every update.
class Adam {
 public:
  Adam(const ParamSet& params, AdamSettings settings);

  void step();

  std::int64_t steps_taken() const { return t_; }
  const AdamSettings& settings() const { return settings_; }

  /// Moments as named tensors: "<param>.m" and "<param>.v".
  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& moments, std::int64_t steps_taken);

 private:
  const ParamSet* params_;
  AdamSettings settings_;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
  std::int64_t t_ = 0;
};

}  // namespace utr
