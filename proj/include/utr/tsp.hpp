#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "utr/layers.hpp"

namespace utr {

enum class BarOrientation { Row, Column };

/// A stack of feature bars cut from a (B, H, W, C) map. Row bars are height-1
/// strips (one per y, length W); column bars are width-1 strips (one per x,
/// length H). Bars of all batch items are stacked along the first axis.
struct FeatureBars {
  Var tokens;  // (B * count, length, C)
  BarOrientation orientation = BarOrientation::Row;
  std::int64_t batch = 0;
  std::int64_t count = 0;
  std::int64_t length = 0;
};

FeatureBars decompose_bars(const Var& map, BarOrientation orientation);
/// Inverse of decompose_bars; bar length may differ from the original.
Var assemble_bars(const FeatureBars& bars);

struct LstmLayer {
  Var w_ih;  // (in, 4H), gate order i, f, g, o
  Var w_hh;  // (H, 4H)
  Var bias;  // (4H)
};

struct Lstm {
  std::vector<LstmLayer> layers;
  std::int64_t hidden = 0;
};

Lstm make_lstm(ParamSet& params, const std::string& name, std::int64_t input, std::int64_t hidden, int num_layers,
               Rng& rng);

struct MultiHeadAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear out;
  int heads = 1;
};

MultiHeadAttention make_mha(ParamSet& params, const std::string& name, std::int64_t channels, int heads, Rng& rng);

struct TspParams {
  Lstm lstm_h;   // horizontal pass (row bars)
  Lstm lstm_v;   // vertical pass (column bars)
  Linear out_proj;
  MultiHeadAttention reg_attn;
  LayerNorm final_norm;
};

TspParams make_tsp(ParamSet& params, std::int64_t channels, int heads, Rng& rng);

/// Runs the recurrent predictor over each bar in both directions and rolls
/// it forward `steps` tokens past each end. Returns (before, after), each
/// (N, steps, C), in spatial order.
std::pair<Var, Var> extend_bar(const Var& bars, std::int64_t steps, const Lstm& lstm, const Linear& out_proj);

/// new_tokens + MHA(query = new_tokens, key/value = context).
/// new_tokens (N, Tq, C), context (N, Tk, C); `context_valid` (N * Tk) may be
/// null for a fully valid context.
Var regulate_bar(const Var& new_tokens, const Var& context, const MultiHeadAttention& attn,
                 std::shared_ptr<const std::vector<std::uint8_t>> context_valid = nullptr);

/// One horizontal or vertical extrapolation pass: every bar grows by `ring`
/// tokens on each end.
Var tsp_pass(const Var& map, BarOrientation orientation, std::int64_t ring, const Lstm& lstm, const TspParams& params);

/// Grows a (B, Hc, Wc, C) center map to (B, Hc + 2ks, Wc + 2ks, C).
Var tsp_forward(const Var& center, std::int64_t steps, std::int64_t ring, const TspParams& params);

}  // namespace utr
