#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "utr/autograd.hpp"

namespace utr::ops {

using Index = std::shared_ptr<const std::vector<std::int64_t>>;

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// x - s for a single-element s, broadcast over x.
Var sub_broadcast(const Var& x, const Var& s);
/// x + bias, bias of shape (C) broadcast over the last axis of x.
Var add_bias(const Var& x, const Var& bias);

/// x (..., K) times w (K, N) -> (..., N).
Var matmul(const Var& x, const Var& w);
/// matmul plus optional bias (N).
Var linear(const Var& x, const Var& w, const Var& b);

/// Normalizes over the last axis, then scales and shifts per channel.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var exp(const Var& x);
Var log(const Var& x);
Var abs(const Var& x);
Var square(const Var& x);

/// out[i] = x[index[i]], or 0 where index[i] < 0.
Var gather(const Var& x, Shape out_shape, Index index);
Var reshape(const Var& x, Shape shape);
Var concat(const std::vector<Var>& xs, int axis);
/// Contiguous range [start, start+len) along `axis`.
Var slice(const Var& x, int axis, std::int64_t start, std::int64_t len);

Var sum(const Var& x);
Var mean(const Var& x);
/// Mean absolute difference over all elements.
Var l1_mean(const Var& a, const Var& b);

// Row-wise ops on the last axis; x is viewed as (rows, cols).
Var sum_last(const Var& x);
Var max_last(const Var& x);
/// x (..., M) divided by d (...) broadcast along the last axis.
Var div_rows(const Var& x, const Var& d);
/// x / sqrt(|x|^2 + eps^2) per row.
Var normalize_rows(const Var& x, double eps);
Var transpose2d(const Var& x);

/// Multi-group scaled dot-product attention.
///   q (G, Tq, d), k (G, Tk, d), v (G, Tk, dv) -> (G, Tq, dv)
/// Group g uses bias[g % heads] (bias shape (heads, Tq, Tk)) and key mask row
/// g / heads (mask length (G / heads) * Tk, nonzero = valid). A query row with
/// no valid key produces zeros.
struct AttentionMask {
  std::shared_ptr<const std::vector<std::uint8_t>> valid;
};
Var attention(const Var& q, const Var& k, const Var& v, const std::optional<Var>& bias, int heads,
              const std::optional<AttentionMask>& mask);

}  // namespace utr::ops
