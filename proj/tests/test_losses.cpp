#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "utr/checkpoint.hpp"
#include "utr/discriminator.hpp"
#include "utr/losses.hpp"
#include "utr/selfcheck.hpp"

using namespace utr;

namespace {

double value(const Var& v) { return v.value().item(); }

Var vec(std::vector<double> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  return constant(Tensor({n}, std::move(v)));
}

}  // namespace

TEST_CASE("pixel reconstruction is the mean absolute error") {
  const Var a = constant(Tensor({1, 1, 2, 1}, std::vector<double>{0.5, -0.5}));
  const Var b = constant(Tensor({1, 1, 2, 1}, std::vector<double>{0.0, 0.5}));
  CHECK(value(pixel_rec_loss(a, b)) == doctest::Approx(0.75));
  CHECK_THROWS_AS(pixel_rec_loss(a, constant(Tensor({1, 2, 1, 1}))), ShapeError);
}

TEST_CASE("feature reconstruction vanishes on identical maps") {
  Rng rng(1);
  const Var f = constant(rng.normal_tensor({1, 4, 4, 8}, 1.0));
  CHECK(value(feat_rec_loss(f, f)) == 0.0);
}

TEST_CASE("RaLSGAN hand cases") {
  NoGradGuard ng;
  auto l = ralsgan_losses(vec({1.0}), vec({0.0}));
  CHECK(value(l.discriminator) == 0.0);
  CHECK(value(l.generator) == 8.0);
  l = ralsgan_losses(vec({0.7, 0.7, 0.7}), vec({0.7, 0.7, 0.7}));
  CHECK(value(l.discriminator) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(value(l.generator) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("RaLSGAN is invariant to a common score shift") {
  NoGradGuard ng;
  const auto a = ralsgan_losses(vec({0.3, -1.2, 2.0}), vec({0.1, 0.5, -0.4}));
  const auto b = ralsgan_losses(vec({5.3, 3.8, 7.0}), vec({5.1, 5.5, 4.6}));
  CHECK(value(a.discriminator) == doctest::Approx(value(b.discriminator)).epsilon(1e-12));
  CHECK(value(a.generator) == doctest::Approx(value(b.generator)).epsilon(1e-12));
}

TEST_CASE("RaLSGAN matches the term-by-term reference on random scores") {
  Rng rng(2);
  NoGradGuard ng;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> r(4), f(4);
    for (auto& v : r) v = rng.normal();
    for (auto& v : f) v = rng.normal();
    const auto l = ralsgan_losses(vec(r), vec(f));
    const auto [d, g] = selfcheck::ralsgan_reference(r, f);
    CHECK(value(l.discriminator) == doctest::Approx(d).epsilon(1e-12));
    CHECK(value(l.generator) == doctest::Approx(g).epsilon(1e-12));
  }
}

TEST_CASE("ID-MRF equals the double-loop oracle") {
  const MrfSettings s;
  NoGradGuard ng;
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(10 + static_cast<std::uint64_t>(seed));
    const Tensor f = rng.normal_tensor({2, 8, 8, 4}, 1.0), r = rng.normal_tensor({2, 8, 8, 4}, 1.0);
    CHECK(std::abs(value(idmrf_feature_loss(constant(f), constant(r), s)) -
                   selfcheck::idmrf_bruteforce(f, r, s.bandwidth, s.epsilon)) <= 1e-6);
    // Self match: every real site's best match is its own site.
    CHECK(std::abs(value(idmrf_feature_loss(constant(f), constant(f), s)) -
                   selfcheck::idmrf_bruteforce(f, f, s.bandwidth, s.epsilon)) <= 1e-6);
  }
}

TEST_CASE("ID-MRF: single patch gives zero, cosine makes it scale invariant, zeros stay finite") {
  const MrfSettings s;
  NoGradGuard ng;
  Rng rng(3);
  CHECK(value(idmrf_feature_loss(constant(rng.normal_tensor({1, 1, 1, 3}, 1.0)),
                                 constant(rng.normal_tensor({1, 1, 1, 3}, 1.0)), s)) == doctest::Approx(0.0));
  Tensor a = rng.normal_tensor({1, 3, 3, 4}, 1.0), b = rng.normal_tensor({1, 3, 3, 4}, 1.0);
  const double base = value(idmrf_feature_loss(constant(a), constant(b), s));
  for (auto& v : a.storage()) v *= 5.0;
  for (auto& v : b.storage()) v *= 5.0;
  CHECK(value(idmrf_feature_loss(constant(a), constant(b), s)) == doctest::Approx(base).epsilon(1e-9));
  const Tensor z({1, 2, 2, 3}, 0.0);
  CHECK(std::isfinite(value(idmrf_feature_loss(constant(z), constant(z), s))));
}

TEST_CASE("default extractor yields two scales and is frozen") {
  const FeatureExtractor fx = FeatureExtractor::make_default(7);
  Rng rng(4);
  NoGradGuard ng;
  const auto feats = fx.extract(constant(rng.uniform_tensor({1, 48, 48, 3}, -1, 1)));
  REQUIRE(feats.size() == 2);
  CHECK(feats[0].shape() == Shape{1, 12, 12, 64});
  CHECK(feats[1].shape() == Shape{1, 6, 6, 64});
  for (const auto& p : fx.params().items()) CHECK_FALSE(p.var.requires_grad());
  // Same seed, same weights.
  const FeatureExtractor again = FeatureExtractor::make_default(7);
  CHECK(again.params().get("extractor.conv0.weight").value().storage() ==
        fx.params().get("extractor.conv0.weight").value().storage());
}

TEST_CASE("extractor weights load from a checkpoint file") {
  const FeatureExtractor donor = FeatureExtractor::make_default(123);
  Checkpoint ck;
  for (const auto& [name, t] : donor.params().snapshot()) ck.tensors.emplace(name, t);
  const auto path = std::filesystem::temp_directory_path() / "utr_test_extractor.utck";
  write_checkpoint(path.string(), ck);
  FeatureExtractor fx = FeatureExtractor::make_default(7);
  fx.load_weights(path.string());
  CHECK(fx.params().get("extractor.conv3.weight").value().storage() ==
        read_checkpoint(path.string()).tensors.at("extractor.conv3.weight").storage());
  ck.tensors.erase("extractor.conv2.bias");
  write_checkpoint(path.string(), ck);
  CHECK_THROWS_AS(fx.load_weights(path.string()), CheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("weighted total recombines exactly and flags the non-finite term") {
  const LossWeights w;
  auto s = [](double v) { return constant(Tensor::scalar(v)); };
  GeneratorLossParts parts{s(0.3), s(0.2), s(1.7), s(2.5)};
  CHECK(value(total_generator_loss(parts, w)) == 20.0 * 0.3 + 1.0 * 0.2 + 0.5 * 1.7 + 1.0 * 2.5);
  parts.mrf = s(std::nan(""));
  try {
    total_generator_loss(parts, w, 17);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.term() == "mrf");
    CHECK(e.step() == 17);
  }
  GeneratorLossParts no_adv{s(0.3), s(0.2), s(1.7), Var()};
  CHECK(value(total_generator_loss(no_adv, w)) == 20.0 * 0.3 + 1.0 * 0.2 + 0.5 * 1.7);
}

TEST_CASE("discriminator maps a batch of images to one score each") {
  Rng rng(5);
  DiscriminatorConfig cfg;
  const DiscriminatorParams d = make_discriminator(cfg, 48, 48, rng);
  NoGradGuard ng;
  const Var scores = discriminator_forward(d, constant(rng.uniform_tensor({3, 48, 48, 3}, -1, 1)));
  CHECK(scores.shape() == Shape{3});
  CHECK_THROWS(discriminator_forward(d, constant(Tensor({1, 32, 32, 3}))));
}
