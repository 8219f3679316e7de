#include "utr/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

namespace fs = std::filesystem;

namespace utr {

namespace {

constexpr const char* kGenPrefix = "generator.";
constexpr const char* kDiscPrefix = "discriminator.";
constexpr const char* kAdamGPrefix = "adam_g.";
constexpr const char* kAdamDPrefix = "adam_d.";

void check_finite(const Var& v, const char* term, std::int64_t step) {
  const double x = v.value().item();
  if (!std::isfinite(x)) throw TrainingError(term, step, "value " + std::to_string(x));
}

void put(Checkpoint& ckpt, const std::string& prefix, const std::map<std::string, Tensor>& values) {
  for (const auto& [name, t] : values) ckpt.tensors.emplace(prefix + name, t);
}

std::map<std::string, Tensor> take(const Checkpoint& ckpt, const std::string& prefix,
                                   const std::map<std::string, Tensor>& expected) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : expected) {
    const std::string key = prefix + name;
    auto it = ckpt.tensors.find(key);
    if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint lacks tensor " + key);
    if (it->second.shape() != t.shape()) {
      throw CheckpointError("shape mismatch for tensor " + key + ": checkpoint has " + shape_str(it->second.shape()) +
                            ", config expects " + shape_str(t.shape()));
    }
    out.emplace(name, it->second);
  }
  return out;
}

std::int64_t meta_int(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.meta.find(key);
  if (it == ckpt.meta.end()) throw CheckpointError("checkpoint lacks meta entry " + key);
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw CheckpointError("bad meta entry " + key + ": " + it->second);
  }
}

AdamSettings adam_settings(const OptimizerSettings& o, double lr) {
  AdamSettings s;
  s.lr = lr;
  s.beta1 = o.beta1;
  s.beta2 = o.beta2;
  s.eps = o.eps;
  s.weight_decay = o.weight_decay;
  return s;
}

}  // namespace

std::string loss_csv_row(const StepLosses& l) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", static_cast<long long>(l.step), l.total,
                l.rec, l.feat_rec, l.mrf, l.adv_g, l.disc);
  return buf;
}

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  gen_ = std::make_unique<GeneratorParams>(make_generator(cfg_.model, rng));
  disc_ = std::make_unique<DiscriminatorParams>(
      make_discriminator(cfg_.discriminator, cfg_.geometry.full_h(), cfg_.geometry.full_w(), rng));
  init_rng_state_ = rng.state();
  extractor_ = FeatureExtractor::make_default(cfg_.extractor_seed);
  if (!cfg_.extractor_weights.empty()) extractor_.load_weights(cfg_.extractor_weights);
  adam_g_ = std::make_unique<Adam>(gen_->params, adam_settings(cfg_.optimizer, cfg_.optimizer.lr_generator));
  adam_d_ = std::make_unique<Adam>(disc_->params, adam_settings(cfg_.optimizer, cfg_.optimizer.lr_discriminator));
}

StepLosses Trainer::train_step(const Batch& batch) {
  const std::int64_t step = step_ + 1;
  StepLosses out;
  out.step = step;
  const Var masked = constant(batch.masked);
  const Var real = constant(batch.ground_truth);

  const GeneratorOutput g = generator_forward(*gen_, cfg_.model, masked, cfg_.geometry, 1);
  check_finite(ops::mean(g.image), "generator_output", step);

  // Discriminator update on the detached fake.
  {
    const Var fake = detach(g.image);
    if (cfg_.freeze_discriminator) {
      NoGradGuard no_grad;
      const auto adv = ralsgan_losses(discriminator_forward(*disc_, real), discriminator_forward(*disc_, fake));
      check_finite(adv.discriminator, "disc", step);
      out.disc = adv.discriminator.value().item();
    } else {
      disc_->params.zero_grad();
      const auto adv = ralsgan_losses(discriminator_forward(*disc_, real), discriminator_forward(*disc_, fake));
      check_finite(adv.discriminator, "disc", step);
      out.disc = adv.discriminator.value().item();
      backward(adv.discriminator);
      adam_d_->step();
    }
  }

  // Generator update; the discriminator only relays gradients.
  GeneratorLossParts parts;
  parts.rec = pixel_rec_loss(real, g.image);
  parts.feat_rec = feat_rec_loss(g.f_center, g.center_features);
  parts.mrf = idmrf_loss(g.image, real, extractor_, cfg_.mrf);
  disc_->params.set_requires_grad(false);
  if (cfg_.weights.adv != 0.0) {
    parts.adv = ralsgan_losses(discriminator_forward(*disc_, real), discriminator_forward(*disc_, g.image)).generator;
  } else {
    NoGradGuard no_grad;
    parts.adv = constant(
        ralsgan_losses(discriminator_forward(*disc_, real), discriminator_forward(*disc_, detach(g.image)))
            .generator.value());
  }
  Var total;
  try {
    total = total_generator_loss(parts, cfg_.weights, step);
  } catch (...) {
    disc_->params.set_requires_grad(true);
    throw;
  }
  gen_->params.zero_grad();
  backward(total);
  disc_->params.set_requires_grad(true);
  disc_->params.zero_grad();
  adam_g_->step();

  out.total = total.value().item();
  out.rec = parts.rec.value().item();
  out.feat_rec = parts.feat_rec.value().item();
  out.mrf = parts.mrf.value().item();
  out.adv_g = parts.adv.value().item();
  step_ = step;
  return out;
}

Checkpoint Trainer::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.meta["step"] = std::to_string(step_);
  ckpt.meta["seed"] = std::to_string(cfg_.seed);
  ckpt.meta["rng_state"] = init_rng_state_;
  ckpt.meta["adam_g_steps"] = std::to_string(adam_g_->steps_taken());
  ckpt.meta["adam_d_steps"] = std::to_string(adam_d_->steps_taken());
  ckpt.config_text = cfg_.to_yaml();
  put(ckpt, kGenPrefix, gen_->params.snapshot());
  put(ckpt, kDiscPrefix, disc_->params.snapshot());
  put(ckpt, kAdamGPrefix, adam_g_->state());
  put(ckpt, kAdamDPrefix, adam_d_->state());
  return ckpt;
}

void Trainer::load_checkpoint(const Checkpoint& ckpt) {
  const auto gen = take(ckpt, kGenPrefix, gen_->params.snapshot());
  const auto disc = take(ckpt, kDiscPrefix, disc_->params.snapshot());
  const auto mg = take(ckpt, kAdamGPrefix, adam_g_->state());
  const auto md = take(ckpt, kAdamDPrefix, adam_d_->state());
  const std::int64_t step = meta_int(ckpt, "step");
  const std::int64_t tg = meta_int(ckpt, "adam_g_steps");
  const std::int64_t td = meta_int(ckpt, "adam_d_steps");
  gen_->params.restore(gen);
  disc_->params.restore(disc);
  adam_g_->load_state(mg, tg);
  adam_d_->load_state(md, td);
  step_ = step;
}

LoadedGenerator load_generator(const std::string& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  LoadedGenerator out;
  try {
    out.config = TrainConfig::from_yaml(ckpt.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config snapshot is invalid: ") + e.what());
  }
  Rng rng(out.config.seed);
  out.generator = make_generator(out.config.model, rng);
  out.generator.params.restore(take(ckpt, kGenPrefix, out.generator.params.snapshot()));
  return out;
}

StepLosses run_training(const TrainConfig& cfg, const RunOptions& opts) {
  Trainer trainer(cfg);
  const Dataset data = load_dataset(opts.data_dir, trainer.config().geometry, trainer.config().fill);
  if (full_batches(static_cast<std::int64_t>(data.size()), cfg.batch_size) < 1) {
    throw DatasetError("dataset of " + std::to_string(data.size()) + " images is smaller than batch size " +
                       std::to_string(cfg.batch_size));
  }
  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (!fs::is_directory(opts.out_dir)) throw std::runtime_error("cannot create output directory " + opts.out_dir);
  const fs::path out_dir(opts.out_dir);
  const fs::path csv_path = out_dir / "losses.csv";

  // Rows already on disk up to the resumed step are kept so the trace stays
  // continuous.
  std::vector<std::string> kept;
  if (!opts.resume.empty()) {
    trainer.load_checkpoint(read_checkpoint(opts.resume));
    std::ifstream old(csv_path);
    std::string line;
    std::getline(old, line);
    while (std::getline(old, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) <= trainer.step()) kept.push_back(line);
    }
  }
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << kLossCsvHeader << '\n';
  for (const auto& line : kept) csv << line << '\n';
  csv.flush();

  StepLosses last;
  while (trainer.step() < cfg.steps) {
    const Batch batch = batch_for_step(data, trainer.step(), cfg.batch_size, cfg.seed);
    last = trainer.train_step(batch);
    csv << loss_csv_row(last) << '\n';
    csv.flush();
    if (opts.log && opts.log_every > 0 && (last.step % opts.log_every == 0 || last.step == 1)) {
      *opts.log << "step " << last.step << " total " << last.total << " rec " << last.rec << " disc " << last.disc
                << std::endl;
    }
    if (cfg.checkpoint_interval > 0 && last.step % cfg.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_%06lld.utck", static_cast<long long>(last.step));
      write_checkpoint((out_dir / name).string(), trainer.to_checkpoint());
    }
  }
  write_checkpoint((out_dir / "final.utck").string(), trainer.to_checkpoint());
  return last;
}

}  // namespace utr
