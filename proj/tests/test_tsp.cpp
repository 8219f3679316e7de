#include <doctest.h>

#include "utr/selfcheck.hpp"
#include "utr/tsp.hpp"

using namespace utr;

TEST_CASE("row bars are height-1 strips and column bars width-1 strips") {
  Tensor f({1, 2, 3, 1}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const FeatureBars rows = decompose_bars(constant(f), BarOrientation::Row);
  CHECK(rows.count == 2);
  CHECK(rows.length == 3);
  CHECK(rows.tokens.value().storage() == std::vector<double>{1, 2, 3, 4, 5, 6});
  const FeatureBars cols = decompose_bars(constant(f), BarOrientation::Column);
  CHECK(cols.count == 3);
  CHECK(cols.length == 2);
  CHECK(cols.tokens.value().storage() == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(assemble_bars(cols).value().storage() == f.storage());
}

TEST_CASE("a 1xW map is a single row bar") {
  const FeatureBars b = decompose_bars(constant(Tensor({1, 1, 5, 2})), BarOrientation::Row);
  CHECK(b.count == 1);
  CHECK(b.length == 5);
}

TEST_CASE("extension returns s tokens on each side in spatial order") {
  Rng rng(1);
  ParamSet ps;
  const TspParams p = make_tsp(ps, 4, 2, rng);
  NoGradGuard ng;
  const Var bars = constant(rng.normal_tensor({3, 4, 4}, 1.0));
  auto [before, after] = extend_bar(bars, 1, p.lstm_h, p.out_proj);
  CHECK(before.shape() == Shape{3, 1, 4});
  CHECK(after.shape() == Shape{3, 1, 4});
  auto [b2, a2] = extend_bar(bars, 3, p.lstm_h, p.out_proj);
  CHECK(b2.shape() == Shape{3, 3, 4});
  // The token next to the bar is the first prediction regardless of length.
  for (std::int64_t i = 0; i < 3; ++i)
    for (std::int64_t c = 0; c < 4; ++c) {
      CHECK(a2.value()[(i * 3 + 0) * 4 + c] == after.value()[i * 4 + c]);
      CHECK(b2.value()[(i * 3 + 2) * 4 + c] == before.value()[i * 4 + c]);
    }
}

TEST_CASE("the reversed roll-out depends on the far end of the bar") {
  Rng rng(2);
  ParamSet ps;
  const TspParams p = make_tsp(ps, 4, 2, rng);
  NoGradGuard ng;
  Tensor bars = rng.normal_tensor({1, 4, 4}, 1.0);
  auto [b1, a1] = extend_bar(constant(bars), 1, p.lstm_h, p.out_proj);
  bars[15] += 1.0;  // last token
  auto [b2, a2] = extend_bar(constant(bars), 1, p.lstm_h, p.out_proj);
  CHECK(b1.value().storage() != b2.value().storage());
  CHECK(a1.value().storage() != a2.value().storage());
}

TEST_CASE("regulation keeps the shape of the new tokens and ignores masked context") {
  Rng rng(3);
  ParamSet ps;
  const MultiHeadAttention attn = make_mha(ps, "r", 4, 2, rng);
  NoGradGuard ng;
  const Var fresh = constant(rng.normal_tensor({2, 2, 4}, 1.0));
  Tensor ctx = rng.normal_tensor({2, 6, 4}, 1.0);
  auto valid = std::make_shared<std::vector<std::uint8_t>>(12, 1);
  (*valid)[5] = 0;
  const Tensor y1 = regulate_bar(fresh, constant(ctx), attn, valid).value();
  CHECK(y1.shape() == Shape{2, 2, 4});
  for (std::int64_t c = 0; c < 4; ++c) ctx[5 * 4 + c] += 10.0;
  const Tensor y2 = regulate_bar(fresh, constant(ctx), attn, valid).value();
  CHECK(y1.storage() == y2.storage());
}

TEST_CASE("TSP grows 4x4 to 6x6 (k=1, s=1) and 8x8 center to 12x12 (k=1, s=2)") {
  Rng rng(4);
  ParamSet ps;
  const TspParams p = make_tsp(ps, 8, 2, rng);
  NoGradGuard ng;
  CHECK(tsp_forward(constant(rng.normal_tensor({1, 4, 4, 8}, 1.0)), 1, 1, p).shape() == Shape{1, 6, 6, 8});
  CHECK(tsp_forward(constant(rng.normal_tensor({2, 8, 8, 8}, 1.0)), 1, 2, p).shape() == Shape{2, 12, 12, 8});
  CHECK(tsp_forward(constant(rng.normal_tensor({1, 4, 4, 8}, 1.0)), 2, 1, p).shape() == Shape{1, 8, 8, 8});
  CHECK_THROWS(tsp_forward(constant(Tensor({1, 4, 4, 8})), 0, 1, p));
}

TEST_CASE("all TSP parameters are named and registered") {
  Rng rng(5);
  ParamSet ps;
  make_tsp(ps, 8, 2, rng);
  CHECK(ps.contains("tsp.lstm_h.layer0.w_ih"));
  CHECK(ps.contains("tsp.lstm_v.layer1.w_hh"));
  CHECK(ps.get("tsp.lstm_h.layer0.w_ih").shape() == Shape{8, 32});
}

TEST_CASE("TSP forward gradient matches finite differences") {
  Rng rng(6);
  ParamSet ps;
  const TspParams p = make_tsp(ps, 4, 2, rng);
  Var center = parameter(rng.normal_tensor({1, 2, 3, 4}, 1.0));
  const Tensor r = rng.normal_tensor({1, 4, 5, 4}, 1.0);
  std::vector<Var> leaves{center};
  for (const auto& item : ps.items()) leaves.push_back(item.var);
  const double err = selfcheck::gradcheck(
      [&] { return ops::sum(ops::mul(tsp_forward(center, 1, 1, p), constant(r))); }, leaves, rng, 12);
  CHECK(err < 1e-4);
}
