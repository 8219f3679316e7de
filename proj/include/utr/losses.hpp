#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "utr/layers.hpp"

namespace utr {

/// A loss term went non-finite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& term, std::int64_t step, const std::string& detail)
      : std::runtime_error("non-finite " + term + " at step " + std::to_string(step) + ": " + detail),
        term_(term),
        step_(step) {}

  const std::string& term() const { return term_; }
  std::int64_t step() const { return step_; }

 private:
  std::string term_;
  std::int64_t step_;
};

struct LossWeights {
  double rec = 20.0;
  double feat_rec = 1.0;
  double mrf = 0.5;
  double adv = 1.0;

  void validate() const;
};

struct MrfSettings {
  double bandwidth = 0.5;
  double epsilon = 1e-5;
};

/// Mean absolute pixel error.
Var pixel_rec_loss(const Var& ground_truth, const Var& prediction);
/// Mean absolute error between extrapolated center features and the
/// encoder features of the clean center.
Var feat_rec_loss(const Var& f_center, const Var& encoder_center);

/// ID-MRF term for one pair of (B, H, W, C) feature maps, averaged over the
/// batch. Every spatial site is a 1x1 patch.
Var idmrf_feature_loss(const Var& fake, const Var& real, const MrfSettings& settings);

/// Frozen image -> multi-scale feature map network. The default is a seeded
/// stack of four convolutions (stride 1, 2, 2, 2) with ReLU; features are
/// tapped after the third and fourth layers.
class FeatureExtractor {
 public:
  static FeatureExtractor make_default(std::uint64_t seed);

  std::vector<Var> extract(const Var& image) const;

  /// Replaces the weights with tensors named `extractor.*` from a checkpoint
  /// container file.
  void load_weights(const std::string& path);

  const ParamSet& params() const { return params_; }

 private:
  ParamSet params_;
  std::vector<Conv2d> convs_;
  std::vector<std::size_t> taps_;
};

Var idmrf_loss(const Var& fake, const Var& real, const FeatureExtractor& extractor, const MrfSettings& settings);

struct AdversarialLosses {
  Var discriminator;
  Var generator;
};

/// Relativistic-average least-squares objectives from per-sample scores.
AdversarialLosses ralsgan_losses(const Var& scores_real, const Var& scores_fake);

struct GeneratorLossParts {
  Var rec;
  Var feat_rec;
  Var mrf;
  Var adv;  // undefined when the adversarial term is skipped
};

/// Weighted sum of the four generator terms. Throws TrainingError naming the
/// first non-finite part.
Var total_generator_loss(const GeneratorLossParts& parts, const LossWeights& weights, std::int64_t step = 0);

}  // namespace utr
