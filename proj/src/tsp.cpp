#include "utr/tsp.hpp"

#include <stdexcept>
#include <string>

namespace utr {

namespace {

using IndexVec = std::vector<std::int64_t>;

// (N, T, C) -> (N * heads, T, C / heads), groups ordered (n, head).
Var split_heads(const Var& x, int heads) {
  const std::int64_t n = x.dim(0), t = x.dim(1), c = x.dim(2), d = c / heads;
  auto idx = std::make_shared<IndexVec>(static_cast<std::size_t>(n * t * c));
  std::size_t i = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t h = 0; h < heads; ++h)
      for (std::int64_t s = 0; s < t; ++s)
        for (std::int64_t j = 0; j < d; ++j) (*idx)[i++] = (b * t + s) * c + h * d + j;
  return ops::gather(x, Shape{n * heads, t, d}, std::move(idx));
}

Var merge_heads(const Var& x, int heads) {
  const std::int64_t g = x.dim(0), t = x.dim(1), d = x.dim(2), n = g / heads, c = d * heads;
  auto idx = std::make_shared<IndexVec>(static_cast<std::size_t>(n * t * c));
  std::size_t i = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t s = 0; s < t; ++s)
      for (std::int64_t h = 0; h < heads; ++h)
        for (std::int64_t j = 0; j < d; ++j) (*idx)[i++] = ((b * heads + h) * t + s) * d + j;
  return ops::gather(x, Shape{n, t, c}, std::move(idx));
}

struct LstmState {
  std::vector<Var> h;
  std::vector<Var> c;
};

Var step_lstm(const Lstm& lstm, LstmState& state, const Var& input) {
  Var x = input;
  const std::int64_t hid = lstm.hidden;
  for (std::size_t l = 0; l < lstm.layers.size(); ++l) {
    const LstmLayer& layer = lstm.layers[l];
    Var gates = ops::add(ops::linear(x, layer.w_ih, layer.bias), ops::matmul(state.h[l], layer.w_hh));
    Var i = ops::sigmoid(ops::slice(gates, 1, 0, hid));
    Var f = ops::sigmoid(ops::slice(gates, 1, hid, hid));
    Var g = ops::tanh(ops::slice(gates, 1, 2 * hid, hid));
    Var o = ops::sigmoid(ops::slice(gates, 1, 3 * hid, hid));
    state.c[l] = ops::add(ops::mul(f, state.c[l]), ops::mul(i, g));
    state.h[l] = ops::mul(o, ops::tanh(state.c[l]));
    x = state.h[l];
  }
  return x;
}

// Runs the bar tokens in the given direction, then autoregresses `steps`
// predictions; returns them nearest-first as (N, 1, C) pieces.
std::vector<Var> roll_out(const Var& bars, bool reverse, std::int64_t steps, const Lstm& lstm, const Linear& out_proj) {
  const std::int64_t n = bars.dim(0), len = bars.dim(1), c = bars.dim(2);
  LstmState state;
  for (std::size_t l = 0; l < lstm.layers.size(); ++l) {
    state.h.push_back(constant(Tensor(Shape{n, lstm.hidden}, 0.0)));
    state.c.push_back(constant(Tensor(Shape{n, lstm.hidden}, 0.0)));
  }
  Var top;
  for (std::int64_t t = 0; t < len; ++t) {
    const std::int64_t pos = reverse ? len - 1 - t : t;
    top = step_lstm(lstm, state, ops::reshape(ops::slice(bars, 1, pos, 1), Shape{n, c}));
  }
  std::vector<Var> out;
  for (std::int64_t s = 0; s < steps; ++s) {
    Var token = out_proj(top);
    out.push_back(ops::reshape(token, Shape{n, 1, c}));
    if (s + 1 < steps) top = step_lstm(lstm, state, token);
  }
  return out;
}

}  // namespace

FeatureBars decompose_bars(const Var& map, BarOrientation orientation) {
  if (map.value().rank() != 4) throw ShapeError("decompose_bars: expected (B, H, W, C), got " + shape_str(map.shape()));
  const std::int64_t b = map.dim(0), h = map.dim(1), w = map.dim(2), c = map.dim(3);
  FeatureBars bars;
  bars.orientation = orientation;
  bars.batch = b;
  if (orientation == BarOrientation::Row) {
    bars.count = h;
    bars.length = w;
    bars.tokens = ops::reshape(map, Shape{b * h, w, c});
    return bars;
  }
  bars.count = w;
  bars.length = h;
  auto idx = std::make_shared<IndexVec>(static_cast<std::size_t>(b * w * h * c));
  std::size_t i = 0;
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t k = 0; k < c; ++k) (*idx)[i++] = ((n * h + y) * w + x) * c + k;
  bars.tokens = ops::gather(map, Shape{b * w, h, c}, std::move(idx));
  return bars;
}

Var assemble_bars(const FeatureBars& bars) {
  const std::int64_t b = bars.batch, count = bars.count, len = bars.tokens.dim(1), c = bars.tokens.dim(2);
  if (bars.tokens.dim(0) != b * count) throw ShapeError("assemble_bars: bar stack size mismatch");
  if (bars.orientation == BarOrientation::Row) return ops::reshape(bars.tokens, Shape{b, count, len, c});
  // Column bars: output (B, len, count, C).
  auto idx = std::make_shared<IndexVec>(static_cast<std::size_t>(b * len * count * c));
  std::size_t i = 0;
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t y = 0; y < len; ++y)
      for (std::int64_t x = 0; x < count; ++x)
        for (std::int64_t k = 0; k < c; ++k) (*idx)[i++] = ((n * count + x) * len + y) * c + k;
  return ops::gather(bars.tokens, Shape{b, len, count, c}, std::move(idx));
}

Lstm make_lstm(ParamSet& params, const std::string& name, std::int64_t input, std::int64_t hidden, int num_layers,
               Rng& rng) {
  Lstm lstm;
  lstm.hidden = hidden;
  for (int l = 0; l < num_layers; ++l) {
    const std::string prefix = name + ".layer" + std::to_string(l);
    const std::int64_t in = l == 0 ? input : hidden;
    LstmLayer layer;
    Tensor w_ih(Shape{in, 4 * hidden});
    for (double& v : w_ih.storage()) v = rng.truncated_normal(0.02);
    Tensor w_hh(Shape{hidden, 4 * hidden});
    for (double& v : w_hh.storage()) v = rng.truncated_normal(0.02);
    layer.w_ih = params.add(prefix + ".w_ih", std::move(w_ih));
    layer.w_hh = params.add(prefix + ".w_hh", std::move(w_hh));
    layer.bias = params.add(prefix + ".bias", Tensor(Shape{4 * hidden}, 0.0));
    lstm.layers.push_back(layer);
  }
  return lstm;
}

MultiHeadAttention make_mha(ParamSet& params, const std::string& name, std::int64_t channels, int heads, Rng& rng) {
  if (heads < 1 || channels % heads != 0) {
    throw ShapeError("attention channels " + std::to_string(channels) + " not divisible by heads " + std::to_string(heads));
  }
  MultiHeadAttention m;
  m.query = make_linear(params, name + ".query", channels, channels, rng);
  m.key = make_linear(params, name + ".key", channels, channels, rng);
  m.value = make_linear(params, name + ".value", channels, channels, rng);
  m.out = make_linear(params, name + ".out", channels, channels, rng);
  m.heads = heads;
  return m;
}

TspParams make_tsp(ParamSet& params, std::int64_t channels, int heads, Rng& rng) {
  TspParams p;
  p.lstm_h = make_lstm(params, "tsp.lstm_h", channels, channels, 2, rng);
  p.lstm_v = make_lstm(params, "tsp.lstm_v", channels, channels, 2, rng);
  p.out_proj = make_linear(params, "tsp.out_proj", channels, channels, rng);
  p.reg_attn = make_mha(params, "tsp.reg_attn", channels, heads, rng);
  p.final_norm = make_layer_norm(params, "tsp.final_norm", channels);
  return p;
}

std::pair<Var, Var> extend_bar(const Var& bars, std::int64_t steps, const Lstm& lstm, const Linear& out_proj) {
  if (bars.value().rank() != 3 || bars.dim(1) < 1) throw ShapeError("extend_bar: expected (N, length >= 1, C)");
  if (steps < 0) throw std::invalid_argument("extend_bar: steps must be >= 0");
  const std::int64_t n = bars.dim(0), c = bars.dim(2);
  if (steps == 0) {
    Var empty = constant(Tensor(Shape{n, 0, c}));
    return {empty, empty};
  }
  std::vector<Var> after = roll_out(bars, false, steps, lstm, out_proj);
  std::vector<Var> before = roll_out(bars, true, steps, lstm, out_proj);
  std::vector<Var> before_spatial(before.rbegin(), before.rend());
  return {ops::concat(before_spatial, 1), ops::concat(after, 1)};
}

Var regulate_bar(const Var& new_tokens, const Var& context, const MultiHeadAttention& attn,
                 std::shared_ptr<const std::vector<std::uint8_t>> context_valid) {
  if (new_tokens.value().rank() != 3 || context.value().rank() != 3 || new_tokens.dim(0) != context.dim(0) ||
      new_tokens.dim(2) != context.dim(2)) {
    throw ShapeError("regulate_bar: incompatible shapes " + shape_str(new_tokens.shape()) + " and " +
                     shape_str(context.shape()));
  }
  if (context.dim(1) < 1) throw ShapeError("regulate_bar: empty context");
  const int heads = attn.heads;
  Var q = split_heads(attn.query(new_tokens), heads);
  Var k = split_heads(attn.key(context), heads);
  Var v = split_heads(attn.value(context), heads);
  std::optional<ops::AttentionMask> mask;
  if (context_valid) mask = ops::AttentionMask{std::move(context_valid)};
  Var att = merge_heads(ops::attention(q, k, v, std::nullopt, heads, mask), heads);
  return ops::add(new_tokens, attn.out(att));
}

Var tsp_pass(const Var& map, BarOrientation orientation, std::int64_t ring, const Lstm& lstm, const TspParams& params) {
  FeatureBars bars = decompose_bars(map, orientation);
  auto [before, after] = extend_bar(bars.tokens, ring, lstm, params.out_proj);
  Var extended = ops::concat({before, bars.tokens, after}, 1);  // (N, L + 2s, C)

  // Context of bar i: extended bars i - 1, i, i + 1 of the same batch item.
  const std::int64_t b = bars.batch, count = bars.count, c = map.dim(3);
  const std::int64_t ext_len = bars.length + 2 * ring, ctx_len = 3 * ext_len;
  auto idx = std::make_shared<IndexVec>(static_cast<std::size_t>(b * count * ctx_len * c));
  auto valid = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(b * count * ctx_len));
  std::size_t i = 0, vi = 0;
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t bar = 0; bar < count; ++bar)
      for (std::int64_t nb = bar - 1; nb <= bar + 1; ++nb) {
        const bool ok = nb >= 0 && nb < count;
        for (std::int64_t t = 0; t < ext_len; ++t) {
          (*valid)[vi++] = ok ? 1 : 0;
          for (std::int64_t k = 0; k < c; ++k) (*idx)[i++] = ok ? ((n * count + nb) * ext_len + t) * c + k : -1;
        }
      }
  Var context = ops::gather(extended, Shape{b * count, ctx_len, c}, std::move(idx));
  Var fresh = ops::concat({before, after}, 1);
  Var regulated = regulate_bar(fresh, context, params.reg_attn, std::move(valid));
  Var reg_before = ops::slice(regulated, 1, 0, ring);
  Var reg_after = ops::slice(regulated, 1, ring, ring);

  FeatureBars grown = bars;
  grown.tokens = ops::concat({reg_before, bars.tokens, reg_after}, 1);
  grown.length = ext_len;
  return assemble_bars(grown);
}

Var tsp_forward(const Var& center, std::int64_t steps, std::int64_t ring, const TspParams& params) {
  if (steps < 1) throw std::invalid_argument("tsp_forward: step count must be >= 1");
  if (ring < 1) throw std::invalid_argument("tsp_forward: ring must be >= 1");
  if (center.value().rank() != 4) throw ShapeError("tsp_forward: expected (B, H, W, C)");
  Var f = center;
  for (std::int64_t k = 0; k < steps; ++k) {
    Var widened = tsp_pass(f, BarOrientation::Row, ring, params.lstm_h, params);
    Var grown = tsp_pass(widened, BarOrientation::Column, ring, params.lstm_v, params);
    f = params.final_norm(grown);
  }
  return f;
}

}  // namespace utr
