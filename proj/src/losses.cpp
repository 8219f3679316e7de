#include "utr/losses.hpp"

#include <cmath>

#include "utr/checkpoint.hpp"

namespace utr {

void LossWeights::validate() const {
  if (rec < 0 || feat_rec < 0 || mrf < 0 || adv < 0) throw std::invalid_argument("loss weights must be >= 0");
}

Var pixel_rec_loss(const Var& ground_truth, const Var& prediction) {
  require_same_shape(ground_truth.shape(), prediction.shape(), "pixel_rec_loss");
  return ops::l1_mean(ground_truth, prediction);
}

Var feat_rec_loss(const Var& f_center, const Var& encoder_center) {
  require_same_shape(f_center.shape(), encoder_center.shape(), "feat_rec_loss");
  return ops::l1_mean(f_center, encoder_center);
}

Var idmrf_feature_loss(const Var& fake, const Var& real, const MrfSettings& settings) {
  require_same_shape(fake.shape(), real.shape(), "idmrf_feature_loss");
  if (fake.value().rank() != 4) throw ShapeError("idmrf_feature_loss: expected (B, H, W, C)");
  const std::int64_t b = fake.dim(0), sites = fake.dim(1) * fake.dim(2), c = fake.dim(3);
  std::vector<Var> per_sample;
  for (std::int64_t n = 0; n < b; ++n) {
    Var v = ops::normalize_rows(ops::reshape(ops::slice(fake, 0, n, 1), Shape{sites, c}), settings.epsilon);
    Var s = ops::normalize_rows(ops::reshape(ops::slice(real, 0, n, 1), Shape{sites, c}), settings.epsilon);
    Var sim = ops::matmul(v, ops::transpose2d(s));  // (fake site, real site)
    Var relative = ops::div_rows(sim, ops::add_scalar(ops::max_last(sim), settings.epsilon));
    Var rs = ops::exp(ops::scale(relative, 1.0 / settings.bandwidth));
    Var rs_norm = ops::div_rows(rs, ops::sum_last(rs));
    Var best = ops::max_last(ops::transpose2d(rs_norm));  // per real site, max over fake sites
    per_sample.push_back(ops::scale(ops::log(ops::mean(best)), -1.0));
  }
  return ops::mean(ops::concat([&] {
    std::vector<Var> r;
    for (auto& p : per_sample) r.push_back(ops::reshape(p, Shape{1}));
    return r;
  }(), 0));
}

FeatureExtractor FeatureExtractor::make_default(std::uint64_t seed) {
  FeatureExtractor fx;
  Rng rng(seed);
  struct Spec {
    std::int64_t in, out, kernel, stride, pad;
  };
  const Spec specs[] = {{3, 16, 3, 1, 1}, {16, 32, 4, 2, 1}, {32, 64, 4, 2, 1}, {64, 64, 4, 2, 1}};
  int i = 0;
  for (const auto& s : specs) {
    const double he = std::sqrt(2.0 / static_cast<double>(s.kernel * s.kernel * s.in));
    fx.convs_.push_back(make_conv2d(fx.params_, "extractor.conv" + std::to_string(i++), s.in, s.out, s.kernel, s.stride,
                                    s.pad, rng, he));
  }
  fx.taps_ = {2, 3};
  fx.params_.set_requires_grad(false);
  return fx;
}

std::vector<Var> FeatureExtractor::extract(const Var& image) const {
  std::vector<Var> feats;
  Var x = image;
  std::size_t next_tap = 0;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = ops::relu(convs_[i](x));
    if (next_tap < taps_.size() && taps_[next_tap] == i) {
      feats.push_back(x);
      ++next_tap;
    }
  }
  return feats;
}

void FeatureExtractor::load_weights(const std::string& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  std::map<std::string, Tensor> values;
  for (const auto& p : params_.items()) {
    auto it = ckpt.tensors.find(p.name);
    if (it == ckpt.tensors.end()) throw CheckpointError("extractor weights file lacks tensor " + p.name);
    if (it->second.shape() != p.var.shape()) {
      throw CheckpointError("shape mismatch for " + p.name + ": file has " + shape_str(it->second.shape()) +
                            ", extractor expects " + shape_str(p.var.shape()));
    }
    values.emplace(p.name, it->second);
  }
  params_.restore(values);
}

Var idmrf_loss(const Var& fake, const Var& real, const FeatureExtractor& extractor, const MrfSettings& settings) {
  require_same_shape(fake.shape(), real.shape(), "idmrf_loss");
  const std::vector<Var> ff = extractor.extract(fake);
  const std::vector<Var> fr = extractor.extract(real);
  Var total;
  for (std::size_t i = 0; i < ff.size(); ++i) {
    Var term = idmrf_feature_loss(ff[i], fr[i], settings);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

AdversarialLosses ralsgan_losses(const Var& scores_real, const Var& scores_fake) {
  if (scores_real.numel() == 0 || scores_fake.numel() == 0) throw ShapeError("ralsgan_losses: empty score vector");
  Var mean_real = ops::mean(scores_real);
  Var mean_fake = ops::mean(scores_fake);
  Var real_rel = ops::sub_broadcast(scores_real, mean_fake);  // s_r - mean(s_f)
  Var fake_rel = ops::sub_broadcast(scores_fake, mean_real);  // s_f - mean(s_r)
  auto msq = [](const Var& x, double offset) { return ops::mean(ops::square(ops::add_scalar(x, offset))); };
  AdversarialLosses out;
  out.discriminator = ops::add(msq(real_rel, -1.0), msq(fake_rel, 1.0));
  out.generator = ops::add(msq(fake_rel, -1.0), msq(real_rel, 1.0));
  return out;
}

Var total_generator_loss(const GeneratorLossParts& parts, const LossWeights& weights, std::int64_t step) {
  weights.validate();
  const std::pair<const char*, const Var*> named[] = {
      {"rec", &parts.rec}, {"feat_rec", &parts.feat_rec}, {"mrf", &parts.mrf}, {"adv", &parts.adv}};
  for (const auto& [name, var] : named) {
    if (var->defined() && !std::isfinite(var->value().item())) {
      throw TrainingError(name, step, "value " + std::to_string(var->value().item()));
    }
  }
  Var total = ops::scale(parts.rec, weights.rec);
  total = ops::add(total, ops::scale(parts.feat_rec, weights.feat_rec));
  total = ops::add(total, ops::scale(parts.mrf, weights.mrf));
  if (parts.adv.defined()) total = ops::add(total, ops::scale(parts.adv, weights.adv));
  return total;
}

}  // namespace utr
