#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>

#include "utr/checkpoint.hpp"
#include "utr/config.hpp"
#include "utr/dataset.hpp"
#include "utr/discriminator.hpp"
#include "utr/generator.hpp"
#include "utr/losses.hpp"
#include "utr/optimizer.hpp"

namespace utr {

struct StepLosses {
  std::int64_t step = 0;  // 1-based index of the completed step
  double total = 0.0;
  double rec = 0.0;
  double feat_rec = 0.0;
  double mrf = 0.0;
  double adv_g = 0.0;
  double disc = 0.0;
};

inline constexpr const char* kLossCsvHeader = "step,total,rec,feat_rec,mrf,adv_g,disc";
std::string loss_csv_row(const StepLosses& l);

/// Generator, discriminator, frozen feature extractor and both optimizers.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  /// One discriminator update on the detached fake (skipped when the
  /// discriminator is frozen), then one generator update. Throws
  /// TrainingError on a non-finite loss.
  StepLosses train_step(const Batch& batch);

  std::int64_t step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }
  GeneratorParams& generator() { return *gen_; }
  const GeneratorParams& generator() const { return *gen_; }
  DiscriminatorParams& discriminator() { return *disc_; }
  const FeatureExtractor& extractor() const { return extractor_; }

  Checkpoint to_checkpoint() const;
  /// Restores weights, moments and the step counter. Every tensor the model
  /// expects must be present with a matching shape; the first offender is
  /// named in the CheckpointError.
  void load_checkpoint(const Checkpoint& ckpt);

 private:
  TrainConfig cfg_;
  std::string init_rng_state_;
  std::unique_ptr<GeneratorParams> gen_;
  std::unique_ptr<DiscriminatorParams> disc_;
  FeatureExtractor extractor_;
  std::unique_ptr<Adam> adam_g_;
  std::unique_ptr<Adam> adam_d_;
  std::int64_t step_ = 0;
};

/// Config and generator restored from a training checkpoint.
struct LoadedGenerator {
  TrainConfig config;
  GeneratorParams generator;
};
LoadedGenerator load_generator(const std::string& path);

struct RunOptions {
  std::string data_dir;
  std::string out_dir;
  std::string resume;  // checkpoint path, empty for a fresh run
  std::ostream* log = nullptr;
  std::int64_t log_every = 50;
};

/// Trains to cfg.steps. Writes losses.csv, ckpt_<step>.utck every
/// checkpoint_interval steps and final.utck. Returns the final step losses.
StepLosses run_training(const TrainConfig& cfg, const RunOptions& opts);

}  // namespace utr
