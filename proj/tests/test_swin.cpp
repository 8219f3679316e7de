#include <doctest.h>

#include <set>

#include "utr/swin.hpp"

using namespace utr;

namespace {

SwinStageConfig small_stage(std::int64_t window = 2) {
  SwinStageConfig s;
  s.depth = 2;
  s.num_heads = 2;
  s.channels = 8;
  s.window = window;
  return s;
}

}  // namespace

TEST_CASE("relative position index covers every offset once per offset class") {
  for (std::int64_t m : {1, 2, 3, 4, 7}) {
    const auto idx = relative_position_index(m);
    const std::int64_t t = m * m, side = 2 * m - 1;
    REQUIRE(static_cast<std::int64_t>(idx.size()) == t * t);
    std::set<std::int64_t> distinct(idx.begin(), idx.end());
    CHECK(static_cast<std::int64_t>(distinct.size()) == side * side);
    for (std::int64_t i = 0; i < t; ++i)
      for (std::int64_t j = 0; j < t; ++j) {
        // Same (dy, dx) -> same slot; the diagonal is the zero offset.
        const std::int64_t dy = i / m - j / m, dx = i % m - j % m;
        CHECK(idx[static_cast<std::size_t>(i * t + j)] == (dy + m - 1) * side + (dx + m - 1));
      }
    CHECK(idx[0] == (m - 1) * side + (m - 1));
  }
}

TEST_CASE("window 7 bias table has 169 entries per head") {
  Rng rng(1);
  const Var table = constant(rng.normal_tensor({3, 169}, 1.0));
  const Var bias = relative_position_bias(table, 7);
  CHECK(bias.shape() == Shape{3, 49, 49});
  CHECK_THROWS_AS(relative_position_bias(constant(Tensor({3, 168})), 7), ShapeError);
}

TEST_CASE("window layout pads to whole windows and offsets by the shift") {
  const WindowLayout l = window_layout(5, 6, 4, 2);
  CHECK(l.windows_y == 2);
  CHECK(l.windows_x == 2);
  CHECK(l.pad_bottom() == 1);
  CHECK(l.pad_right() == 0);
  // Slot (0,0) of the first window sits in the padding above/left of the map.
  CHECK(l.token[0] == -1);
  CHECK(l.token[static_cast<std::size_t>(2 * 4 + 2)] == 0);
  CHECK_THROWS_AS(window_layout(4, 4, 4, 4), ShapeError);
}

TEST_CASE("window partition round trip with and without shift") {
  Rng rng(2);
  for (std::int64_t h : {3, 7, 8})
    for (std::int64_t shift : {0, 2}) {
      const Tensor x = rng.normal_tensor({2, h, 9, 5}, 1.0);
      const Windows w = window_partition(constant(x), 4, shift);
      CHECK(w.tokens.dim(1) == 16);
      CHECK(window_reverse(w).value().storage() == x.storage());
    }
}

TEST_CASE("swin block applies pre-norm attention then pre-norm MLP, both residual") {
  Rng rng(3);
  const SwinStageConfig st = small_stage();
  ParamSet ps;
  const SwinBlockParams b = make_swin_block(ps, "blk", st, rng);
  const Var x = constant(rng.normal_tensor({1, 4, 4, 8}, 1.0));
  NoGradGuard ng;
  const Var z_hat = ops::add(window_msa(b.norm1(x), b, st, 1), x);
  const Var manual = ops::add(b.fc2(ops::gelu(b.fc1(b.norm2(z_hat)))), z_hat);
  CHECK(swin_block(x, b, st, 1).value().storage() == manual.value().storage());
  CHECK(b.fc1.weight.shape() == Shape{8, 32});
  CHECK(b.bias_table.shape() == Shape{2, 9});
}

TEST_CASE("block pair runs the shifted block second with shift M/2") {
  Rng rng(4);
  const SwinStageConfig st = small_stage(4);
  ParamSet ps;
  const auto b0 = make_swin_block(ps, "a", st, rng);
  const auto b1 = make_swin_block(ps, "b", st, rng);
  const Var x = constant(rng.normal_tensor({1, 6, 6, 8}, 1.0));
  NoGradGuard ng;
  const Tensor pair = swin_block_pair(x, st, b0, b1).value();
  const Tensor manual = swin_block(swin_block(x, b0, st, 0), b1, st, 2).value();
  CHECK(pair.storage() == manual.storage());
}

TEST_CASE("patch embedding of a 192x192 image at patch 4, C=96") {
  Rng rng(5);
  ParamSet ps;
  const Linear embed = make_linear(ps, "e", 48, 96, rng);
  NoGradGuard ng;
  const Var tokens = patch_embed(constant(rng.uniform_tensor({1, 192, 192, 3}, -1, 1)), 4, embed);
  CHECK(tokens.shape() == Shape{1, 48, 48, 96});
  CHECK_THROWS_AS(patch_embed(constant(Tensor({1, 190, 192, 3})), 4, embed), ShapeError);
}

TEST_CASE("patch unembed inverts the patch flattening order") {
  Rng rng(6);
  const Tensor img = rng.normal_tensor({1, 8, 6, 3}, 1.0);
  ParamSet ps;
  Linear id = make_linear(ps, "id", 12, 12, rng, 0.0, false);
  for (std::int64_t i = 0; i < 12; ++i) id.weight.mutable_value()[i * 12 + i] = 1.0;
  NoGradGuard ng;
  const Var tokens = patch_embed(constant(img), 2, id);
  CHECK(patch_unembed(tokens, 2).value().storage() == img.storage());
}

TEST_CASE("space to depth groups TL, TR, BL, BR and round trips") {
  Tensor x({1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  const Tensor s = space_to_depth2(constant(x)).value();
  CHECK(s.shape() == Shape{1, 1, 1, 4});
  CHECK(s.storage() == std::vector<double>{1, 2, 3, 4});
  Rng rng(7);
  const Tensor y = rng.normal_tensor({2, 4, 6, 3}, 1.0);
  CHECK(depth_to_space2(space_to_depth2(constant(y))).value().storage() == y.storage());
  CHECK_THROWS_AS(space_to_depth2(constant(Tensor({1, 3, 4, 1}))), ShapeError);
}

TEST_CASE("patch merge halves resolution and doubles channels; expand inverts the shape") {
  Rng rng(8);
  ParamSet ps;
  const Linear merge = make_linear(ps, "m", 32, 16, rng);
  const Linear expand = make_linear(ps, "x", 16, 32, rng);
  NoGradGuard ng;
  const Var x = constant(rng.normal_tensor({1, 6, 6, 8}, 1.0));
  const Var merged = patch_merge(x, merge);
  CHECK(merged.shape() == Shape{1, 3, 3, 16});
  CHECK(patch_expand(merged, expand).shape() == Shape{1, 6, 6, 8});
}

TEST_CASE("skip fusion averages on the center and leaves the rest bit-identical") {
  Rng rng(9);
  const Tensor fe = rng.normal_tensor({1, 4, 4, 2}, 1.0), fd = rng.normal_tensor({1, 4, 4, 2}, 1.0);
  const Region c{1, 1, 2, 2};
  const Tensor out = skip_fuse(constant(fe), constant(fd), c).value();
  for (std::int64_t y = 0; y < 4; ++y)
    for (std::int64_t x = 0; x < 4; ++x)
      for (std::int64_t k = 0; k < 2; ++k) {
        if (c.contains(y, x)) {
          CHECK(out.at(0, y, x, k) == doctest::Approx((fe.at(0, y, x, k) + fd.at(0, y, x, k)) / 2).epsilon(1e-15));
        } else {
          CHECK(out.at(0, y, x, k) == fd.at(0, y, x, k));
        }
      }
}

TEST_CASE("backbone arithmetic for the reference configuration") {
  const BackboneConfig cfg;
  CHECK(cfg.downsample() == 32);
  CHECK(cfg.bottleneck_channels() == 768);
  CHECK(cfg.stage(2).channels == 384);
  CHECK(cfg.stage(3).num_heads == 24);
  CHECK(cfg.stage_downsample(1) == 8);
  BackboneConfig bad = cfg;
  bad.heads = {3, 5, 12, 24};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("encoder is resolution polymorphic and decoder returns an image in (-1, 1)") {
  BackboneConfig cfg;
  cfg.patch_size = 2;
  cfg.embed_dim = 8;
  cfg.window = 2;
  cfg.depths = {2, 2};
  cfg.heads = {2, 2};
  Rng rng(10);
  ParamSet ps;
  const EncoderParams enc = make_encoder(ps, cfg, rng);
  const DecoderParams dec = make_decoder(ps, cfg, rng);
  NoGradGuard ng;
  const auto big = encoder_forward(constant(rng.uniform_tensor({1, 24, 24, 3}, -1, 1)), enc, cfg);
  const auto small = encoder_forward(constant(rng.uniform_tensor({1, 16, 16, 3}, -1, 1)), enc, cfg);
  REQUIRE(big.size() == 2);
  CHECK(big[0].shape() == Shape{1, 12, 12, 8});
  CHECK(big[1].shape() == Shape{1, 6, 6, 16});
  CHECK(small[1].shape() == Shape{1, 4, 4, 16});
  const OutpaintGeometry geom{16, 16, 4, 4};
  const Tensor out = decoder_forward(big.back(), big, dec, cfg, geom).value();
  CHECK(out.shape() == Shape{1, 24, 24, 3});
  for (double v : out.storage()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}
