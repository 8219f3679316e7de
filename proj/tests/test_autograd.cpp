#include <doctest.h>

#include <cmath>

#include "utr/ops.hpp"
#include "utr/rng.hpp"
#include "utr/selfcheck.hpp"

using namespace utr;
using selfcheck::gradcheck;

namespace {

Var leaf(Rng& rng, Shape s) { return parameter(rng.normal_tensor(std::move(s), 1.0)); }

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    Var a = leaf(rng, {3, 4}), b = leaf(rng, {3, 4});
    const Tensor r = rng.normal_tensor({3, 4}, 1.0);
    auto w = [&](const Var& x) { return ops::sum(ops::mul(x, constant(r))); };
    CHECK(gradcheck([&] { return w(ops::add(a, b)); }, {a, b}, rng) < 1e-7);
    CHECK(gradcheck([&] { return w(ops::sub(a, b)); }, {a, b}, rng) < 1e-7);
    CHECK(gradcheck([&] { return w(ops::mul(a, b)); }, {a, b}, rng) < 1e-7);
    CHECK(gradcheck([&] { return w(ops::gelu(a)); }, {a}, rng) < 1e-6);
    CHECK(gradcheck([&] { return w(ops::tanh(a)); }, {a}, rng) < 1e-6);
    CHECK(gradcheck([&] { return w(ops::sigmoid(a)); }, {a}, rng) < 1e-6);
    CHECK(gradcheck([&] { return w(ops::exp(ops::scale(a, 0.5))); }, {a}, rng) < 1e-6);
    CHECK(gradcheck([&] { return w(ops::log(ops::add_scalar(ops::square(a), 1.0))); }, {a}, rng) < 1e-6);
    CHECK(gradcheck([&] { return w(ops::leaky_relu(a, 0.2)); }, {a}, rng) < 1e-6);
  }
}

TEST_CASE("matmul, layer norm and reductions match finite differences") {
  for (int seed = 0; seed < 5; ++seed) {
    Rng rng(10 + static_cast<std::uint64_t>(seed));
    Var x = leaf(rng, {2, 3, 5}), w = leaf(rng, {5, 4}), b = leaf(rng, {4});
    Rng fixed(99);
    const Tensor r1 = fixed.normal_tensor({2, 3, 4}, 1.0);
    CHECK(gradcheck([&] { return ops::sum(ops::mul(ops::linear(x, w, b), constant(r1))); }, {x, w, b}, rng) < 1e-6);
    Var g = leaf(rng, {5}), be = leaf(rng, {5});
    const Tensor r = fixed.normal_tensor({2, 3, 5}, 1.0);
    CHECK(gradcheck([&] { return ops::sum(ops::mul(ops::layer_norm(x, g, be), constant(r))); }, {x, g, be}, rng) < 1e-6);
    const Tensor r3 = fixed.normal_tensor({2, 3}, 1.0);
    CHECK(gradcheck([&] { return ops::sum(ops::mul(ops::max_last(x), constant(r3))); }, {x}, rng) < 1e-6);
    CHECK(gradcheck([&] { return ops::sum(ops::mul(ops::sum_last(x), constant(r3))); }, {x}, rng) < 1e-6);
    Var m = leaf(rng, {4, 6});
    const Tensor r4 = fixed.normal_tensor({6, 4}, 1.0);
    CHECK(gradcheck([&] { return ops::sum(ops::mul(ops::transpose2d(m), constant(r4))); }, {m}, rng) < 1e-7);
    const Tensor r5 = fixed.normal_tensor({4, 6}, 1.0);
    CHECK(gradcheck([&] { return ops::sum(ops::mul(ops::normalize_rows(m, 1e-5), constant(r5))); }, {m}, rng) < 1e-6);
  }
}

TEST_CASE("shape ops route gradients back") {
  Rng rng(4);
  Var a = leaf(rng, {2, 3, 4}), b = leaf(rng, {2, 2, 4});
  Rng fixed(5);
  const Tensor r = fixed.normal_tensor({2, 5, 4}, 1.0);
  CHECK(gradcheck([&] { return ops::sum(ops::mul(ops::concat({a, b}, 1), constant(r))); }, {a, b}, rng) < 1e-7);
  const Tensor r2 = fixed.normal_tensor({2, 2, 4}, 1.0);
  CHECK(gradcheck([&] { return ops::sum(ops::mul(ops::slice(a, 1, 1, 2), constant(r2))); }, {a}, rng) < 1e-7);
  auto idx = std::make_shared<std::vector<std::int64_t>>(std::vector<std::int64_t>{0, 0, -1, 5, 23, 5});
  const Tensor r3 = fixed.normal_tensor({6}, 1.0);
  CHECK(gradcheck([&] { return ops::sum(ops::mul(ops::gather(a, {6}, idx), constant(r3))); }, {a}, rng) < 1e-7);
}

TEST_CASE("gather with -1 yields zero and scatter-adds duplicates") {
  Var x = parameter(Tensor({3}, std::vector<double>{1, 2, 3}));
  auto idx = std::make_shared<std::vector<std::int64_t>>(std::vector<std::int64_t>{2, -1, 2, 0});
  Var y = ops::gather(x, {4}, idx);
  CHECK(y.value()[0] == 3.0);
  CHECK(y.value()[1] == 0.0);
  backward(ops::sum(y));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 2.0);
}

TEST_CASE("attention rows without valid keys produce zeros") {
  Rng rng(8);
  const Var q = constant(rng.normal_tensor({2, 2, 3}, 1.0));
  const Var k = constant(rng.normal_tensor({2, 3, 3}, 1.0));
  const Var v = constant(rng.normal_tensor({2, 3, 2}, 1.0));
  auto valid = std::make_shared<std::vector<std::uint8_t>>(std::vector<std::uint8_t>{0, 0, 0, 1, 1, 1});
  const Tensor out = ops::attention(q, k, v, std::nullopt, 1, ops::AttentionMask{valid}).value();
  for (std::int64_t i = 0; i < 4; ++i) CHECK(out[i] == 0.0);
  CHECK(out[4] != 0.0);
}

TEST_CASE("attention with a single valid key copies its value") {
  Rng rng(9);
  const Var q = constant(rng.normal_tensor({1, 2, 3}, 1.0));
  const Var k = constant(rng.normal_tensor({1, 3, 3}, 1.0));
  const Var v = constant(rng.normal_tensor({1, 3, 2}, 1.0));
  auto valid = std::make_shared<std::vector<std::uint8_t>>(std::vector<std::uint8_t>{0, 1, 0});
  const Tensor out = ops::attention(q, k, v, std::nullopt, 1, ops::AttentionMask{valid}).value();
  CHECK(out[0] == doctest::Approx(v.value()[2]).epsilon(1e-12));
  CHECK(out[3] == doctest::Approx(v.value()[3]).epsilon(1e-12));
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  Var x = parameter(Tensor({2}, 1.0));
  NoGradGuard guard;
  Var y = ops::scale(x, 2.0);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->inputs.empty());
}

TEST_CASE("gradients accumulate across uses of a node") {
  Var x = parameter(Tensor({1}, 3.0));
  backward(ops::sum(ops::mul(x, x)));
  CHECK(x.grad()[0] == 6.0);
}

TEST_CASE("broadcast shape mismatches throw") {
  CHECK_THROWS_AS(ops::add(constant(Tensor({2, 3})), constant(Tensor({3, 2}))), ShapeError);
  CHECK_THROWS_AS(ops::matmul(constant(Tensor({2, 3})), constant(Tensor({2, 3}))), ShapeError);
}
