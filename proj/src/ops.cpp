#include "utr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace utr::ops {

namespace {

Tensor* grad_of(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  return &in.grad_buffer();
}

const Tensor& value_of(Node& self, std::size_t i) { return self.inputs[i]->value; }

// out (M, N) += a (M, K) * b (K, N)
void gemm_nn(const double* a, const double* b, double* out, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    const double* arow = a + i * k;
    std::int64_t p = 0;
    // Four rows of b per sweep; the sum order per element stays p-ascending.
    for (; p + 4 <= k; p += 4) {
      const double a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2], a3 = arow[p + 3];
      const double* b0 = b + p * n;
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] = (((orow[j] + a0 * b0[j]) + a1 * b1[j]) + a2 * b2[j]) + a3 * b3[j];
    }
    for (; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out (M, K) += a (M, N) * b^T, b (K, N). b is transposed once so the inner
// loop runs over contiguous output columns.
void gemm_nt(const double* a, const double* b, double* out, std::int64_t m, std::int64_t n, std::int64_t k) {
  std::vector<double> bt(static_cast<std::size_t>(n * k));
  for (std::int64_t p = 0; p < k; ++p)
    for (std::int64_t j = 0; j < n; ++j) bt[static_cast<std::size_t>(j * k + p)] = b[p * n + j];
  gemm_nn(a, bt.data(), out, m, n, k);
}

// out (K, N) += a^T * b, a (M, K), b (M, N)
void gemm_tn(const double* a, const double* b, double* out, std::int64_t m, std::int64_t k, std::int64_t n) {
  std::int64_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    const double* b0 = b + i * n;
    const double* b1 = b0 + n;
    const double* b2 = b1 + n;
    const double* b3 = b2 + n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      double* orow = out + p * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] = (((orow[j] + v0 * b0[j]) + v1 * b1[j]) + v2 * b2[j]) + v3 * b3[j];
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* orow = out + p * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

template <typename F, typename DF>
Var unary(const Var& x, F f, DF df) {
  Tensor out(x.shape());
  const auto& xv = x.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = f(xv[i]);
  return make_result(std::move(out), {x}, [df](Node& self) {
    Tensor* gx = grad_of(self, 0);
    if (!gx) return;
    const Tensor& xv = value_of(self, 0);
    for (std::int64_t i = 0; i < xv.numel(); ++i) (*gx)[i] += self.grad[i] * df(xv[i], self.value[i]);
  });
}

std::int64_t last_dim(const Var& x, const char* what) {
  if (x.value().rank() < 1) throw ShapeError(std::string(what) + ": needs rank >= 1");
  return x.shape().back();
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor* g = grad_of(self, k)) {
        for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = value_of(self, 0);
    const Tensor& bv = value_of(self, 1);
    if (Tensor* g = grad_of(self, 0)) {
      for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var sub_broadcast(const Var& x, const Var& s) {
  if (s.numel() != 1) throw ShapeError("sub_broadcast: subtrahend must have one element");
  Tensor out(x.shape());
  const double sv = s.value()[0];
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] - sv;
  return make_result(std::move(out), {x, s}, [](Node& self) {
    double total = 0.0;
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) total += self.grad[i];
    if (Tensor* g = grad_of(self, 0)) {
      for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = grad_of(self, 1)) (*g)[0] -= total;
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const std::int64_t c = last_dim(x, "add_bias");
  require_shape(bias.value(), Shape{c}, "add_bias bias");
  Tensor out(x.shape());
  const auto& xv = x.value();
  const auto& bv = bias.value();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = xv[i] + bv[i % c];
  return make_result(std::move(out), {x, bias}, [c](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) (*g)[i % c] += self.grad[i];
    }
  });
}

Var matmul(const Var& x, const Var& w) {
  const std::int64_t k = last_dim(x, "matmul");
  if (w.value().rank() != 2 || w.dim(0) != k) {
    throw ShapeError("matmul: cannot multiply " + shape_str(x.shape()) + " by " + shape_str(w.shape()));
  }
  const std::int64_t n = w.dim(1);
  const std::int64_t m = x.numel() / std::max<std::int64_t>(k, 1);
  Shape out_shape = x.shape();
  out_shape.back() = n;
  Tensor out(out_shape, 0.0);
  gemm_nn(x.value().data().data(), w.value().data().data(), out.data().data(), m, k, n);
  return make_result(std::move(out), {x, w}, [m, k, n](Node& self) {
    const Tensor& xv = value_of(self, 0);
    const Tensor& wv = value_of(self, 1);
    if (Tensor* g = grad_of(self, 0)) gemm_nt(self.grad.data().data(), wv.data().data(), g->data().data(), m, n, k);
    if (Tensor* g = grad_of(self, 1)) gemm_tn(xv.data().data(), self.grad.data().data(), g->data().data(), m, k, n);
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const std::int64_t c = last_dim(x, "layer_norm");
  require_shape(gamma.value(), Shape{c}, "layer_norm gamma");
  require_shape(beta.value(), Shape{c}, "layer_norm beta");
  const std::int64_t rows = x.numel() / std::max<std::int64_t>(c, 1);
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * c;
    double mu = 0.0;
    for (std::int64_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (std::int64_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[static_cast<std::size_t>(r * c + j)] = h;
      out[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return make_result(std::move(out), {x, gamma, beta}, [c, rows, xhat, inv_std](Node& self) {
    const Tensor& gv = value_of(self, 1);
    if (Tensor* g = grad_of(self, 1)) {
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) (*g)[i % c] += self.grad[i] * (*xhat)[static_cast<std::size_t>(i)];
    }
    if (Tensor* g = grad_of(self, 2)) {
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) (*g)[i % c] += self.grad[i];
    }
    if (Tensor* g = grad_of(self, 0)) {
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::int64_t r = 0; r < rows; ++r) {
        double sum_dh = 0.0, sum_dh_h = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
          const double dh = self.grad[r * c + j] * gv[j];
          sum_dh += dh;
          sum_dh_h += dh * (*xhat)[static_cast<std::size_t>(r * c + j)];
        }
        const double is = (*inv_std)[static_cast<std::size_t>(r)];
        for (std::int64_t j = 0; j < c; ++j) {
          const double dh = self.grad[r * c + j] * gv[j];
          const double h = (*xhat)[static_cast<std::size_t>(r * c + j)];
          (*g)[r * c + j] += is * (dh - inv_c * sum_dh - h * inv_c * sum_dh_h);
        }
      }
    }
  });
}

Var gelu(const Var& x) {
  return unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var abs(const Var& x) {
  return unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var gather(const Var& x, Shape out_shape, Index index) {
  if (shape_numel(out_shape) != static_cast<std::int64_t>(index->size())) {
    throw ShapeError("gather: index length does not match output shape " + shape_str(out_shape));
  }
  Tensor out(std::move(out_shape), 0.0);
  const auto& xv = x.value();
  const auto& idx = *index;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= 0) out[static_cast<std::int64_t>(i)] = xv[idx[i]];
  }
  return make_result(std::move(out), {x}, [index](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    const auto& idx = *index;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= 0) (*g)[idx[i]] += self.grad[static_cast<std::int64_t>(i)];
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
  });
}

Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = xs.front().shape();
  const int rank = static_cast<int>(first.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (static_cast<int>(s.size()) != rank) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d != axis && s[static_cast<std::size_t>(d)] != first[static_cast<std::size_t>(d)]) {
        throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
      }
    }
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= first[static_cast<std::size_t>(d)];
  const std::int64_t out_axis = out_shape[static_cast<std::size_t>(axis)];
  std::vector<std::int64_t> offsets;
  std::vector<std::int64_t> widths;
  std::int64_t off = 0;
  for (const auto& x : xs) {
    offsets.push_back(off);
    widths.push_back(x.shape()[static_cast<std::size_t>(axis)]);
    off += widths.back();
  }
  Tensor out(out_shape, 0.0);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto& xv = xs[k].value();
    const std::int64_t chunk = widths[k] * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(xv.data().data() + o * chunk, chunk, out.data().data() + (o * out_axis + offsets[k]) * inner);
    }
  }
  return make_result(std::move(out), xs, [outer, inner, out_axis, offsets, widths](Node& self) {
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      Tensor* g = grad_of(self, k);
      if (!g) continue;
      const std::int64_t chunk = widths[k] * inner;
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = self.grad.data().data() + (o * out_axis + offsets[k]) * inner;
        double* dst = g->data().data() + o * chunk;
        for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice(const Var& x, int axis, std::int64_t start, std::int64_t len) {
  const Shape& s = x.shape();
  const int rank = static_cast<int>(s.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("slice: axis out of range");
  const std::int64_t extent = s[static_cast<std::size_t>(axis)];
  if (start < 0 || len < 0 || start + len > extent) {
    throw ShapeError("slice: range out of bounds for shape " + shape_str(s));
  }
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= s[static_cast<std::size_t>(d)];
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = len;
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>(outer * len * inner));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t a = 0; a < len; ++a) {
      const std::int64_t base = (o * extent + start + a) * inner;
      for (std::int64_t i = 0; i < inner; ++i) idx->push_back(base + i);
    }
  }
  return gather(x, std::move(out_shape), std::move(idx));
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_result(Tensor::scalar(s), {x}, [](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    const double d = self.grad[0];
    for (std::int64_t i = 0; i < g->numel(); ++i) (*g)[i] += d;
  });
}

Var mean(const Var& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Var l1_mean(const Var& a, const Var& b) { return mean(abs(sub(a, b))); }

Var sum_last(const Var& x) {
  const std::int64_t c = last_dim(x, "sum_last");
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  Tensor out(out_shape, 0.0);
  const std::int64_t rows = out.numel();
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::int64_t j = 0; j < c; ++j) s += x.value()[r * c + j];
    out[r] = s;
  }
  return make_result(std::move(out), {x}, [c, rows](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t j = 0; j < c; ++j) (*g)[r * c + j] += self.grad[r];
    }
  });
}

Var max_last(const Var& x) {
  const std::int64_t c = last_dim(x, "max_last");
  if (c == 0) throw ShapeError("max_last over empty axis");
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  Tensor out(out_shape, 0.0);
  const std::int64_t rows = out.numel();
  auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < c; ++j) {
      if (x.value()[r * c + j] > x.value()[r * c + best]) best = j;
    }
    (*arg)[static_cast<std::size_t>(r)] = best;
    out[r] = x.value()[r * c + best];
  }
  return make_result(std::move(out), {x}, [c, rows, arg](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    for (std::int64_t r = 0; r < rows; ++r) (*g)[r * c + (*arg)[static_cast<std::size_t>(r)]] += self.grad[r];
  });
}

Var div_rows(const Var& x, const Var& d) {
  const std::int64_t c = last_dim(x, "div_rows");
  Shape row_shape(x.shape().begin(), x.shape().end() - 1);
  require_shape(d.value(), row_shape, "div_rows divisor");
  const std::int64_t rows = d.numel();
  Tensor out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < c; ++j) out[r * c + j] = x.value()[r * c + j] / d.value()[r];
  }
  return make_result(std::move(out), {x, d}, [c, rows](Node& self) {
    const Tensor& dv = value_of(self, 1);
    if (Tensor* g = grad_of(self, 0)) {
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < c; ++j) (*g)[r * c + j] += self.grad[r * c + j] / dv[r];
      }
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::int64_t j = 0; j < c; ++j) s += self.grad[r * c + j] * self.value[r * c + j];
        (*g)[r] -= s / dv[r];
      }
    }
  });
}

Var normalize_rows(const Var& x, double eps) {
  const std::int64_t c = last_dim(x, "normalize_rows");
  const std::int64_t rows = x.numel() / std::max<std::int64_t>(c, 1);
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  Tensor out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    double s = eps * eps;
    for (std::int64_t j = 0; j < c; ++j) s += x.value()[r * c + j] * x.value()[r * c + j];
    const double n = std::sqrt(s);
    (*norms)[static_cast<std::size_t>(r)] = n;
    for (std::int64_t j = 0; j < c; ++j) out[r * c + j] = x.value()[r * c + j] / n;
  }
  return make_result(std::move(out), {x}, [c, rows, norms](Node& self) {
    Tensor* g = grad_of(self, 0);
    if (!g) return;
    const Tensor& xv = value_of(self, 0);
    for (std::int64_t r = 0; r < rows; ++r) {
      const double n = (*norms)[static_cast<std::size_t>(r)];
      double gx = 0.0;
      for (std::int64_t j = 0; j < c; ++j) gx += self.grad[r * c + j] * xv[r * c + j];
      for (std::int64_t j = 0; j < c; ++j) {
        (*g)[r * c + j] += (self.grad[r * c + j] - xv[r * c + j] * gx / (n * n)) / n;
      }
    }
  });
}

Var transpose2d(const Var& x) {
  if (x.value().rank() != 2) throw ShapeError("transpose2d needs rank 2, got " + shape_str(x.shape()));
  const std::int64_t r = x.dim(0), c = x.dim(1);
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(r * c));
  for (std::int64_t j = 0; j < c; ++j) {
    for (std::int64_t i = 0; i < r; ++i) (*idx)[static_cast<std::size_t>(j * r + i)] = i * c + j;
  }
  return gather(x, Shape{c, r}, std::move(idx));
}

Var attention(const Var& q, const Var& k, const Var& v, const std::optional<Var>& bias, int heads,
              const std::optional<AttentionMask>& mask) {
  if (q.value().rank() != 3 || k.value().rank() != 3 || v.value().rank() != 3) {
    throw ShapeError("attention: q, k, v must be rank 3");
  }
  const std::int64_t groups = q.dim(0), tq = q.dim(1), d = q.dim(2);
  const std::int64_t tk = k.dim(1), dv = v.dim(2);
  if (k.dim(0) != groups || v.dim(0) != groups || k.dim(2) != d || v.dim(1) != tk) {
    throw ShapeError("attention: incompatible q/k/v shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                     ", " + shape_str(v.shape()));
  }
  if (heads < 1 || groups % heads != 0) throw ShapeError("attention: groups not divisible by heads");
  if (bias) require_shape(bias->value(), Shape{heads, tq, tk}, "attention bias");
  if (mask && static_cast<std::int64_t>(mask->valid->size()) != (groups / heads) * tk) {
    throw ShapeError("attention: key mask length mismatch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups * tq * tk), 0.0);
  Tensor out(Shape{groups, tq, dv}, 0.0);
  const double* qd = q.value().data().data();
  const double* kd = k.value().data().data();
  const double* vd = v.value().data().data();
  std::vector<double> row(static_cast<std::size_t>(tk));
  for (std::int64_t g = 0; g < groups; ++g) {
    const std::uint8_t* valid = mask ? mask->valid->data() + (g / heads) * tk : nullptr;
    const double* b = bias ? bias->value().data().data() + (g % heads) * tq * tk : nullptr;
    for (std::int64_t i = 0; i < tq; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < tk; ++j) {
        if (valid && !valid[j]) continue;
        double s = 0.0;
        for (std::int64_t c = 0; c < d; ++c) s += qd[(g * tq + i) * d + c] * kd[(g * tk + j) * d + c];
        s *= scale;
        if (b) s += b[i * tk + j];
        row[static_cast<std::size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      if (mx == -std::numeric_limits<double>::infinity()) continue;
      double z = 0.0;
      for (std::int64_t j = 0; j < tk; ++j) {
        if (valid && !valid[j]) continue;
        const double e = std::exp(row[static_cast<std::size_t>(j)] - mx);
        row[static_cast<std::size_t>(j)] = e;
        z += e;
      }
      double* p = probs->data() + (g * tq + i) * tk;
      double* o = out.data().data() + (g * tq + i) * dv;
      for (std::int64_t j = 0; j < tk; ++j) {
        if (valid && !valid[j]) continue;
        p[j] = row[static_cast<std::size_t>(j)] / z;
        const double* vr = vd + (g * tk + j) * dv;
        for (std::int64_t c = 0; c < dv; ++c) o[c] += p[j] * vr[c];
      }
    }
  }
  std::vector<Var> inputs{q, k, v};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return make_result(std::move(out), std::move(inputs),
                     [groups, tq, tk, d, dv, heads, scale, probs, has_bias](Node& self) {
                       const double* qd = self.inputs[0]->value.data().data();
                       const double* kd = self.inputs[1]->value.data().data();
                       const double* vd = self.inputs[2]->value.data().data();
                       Tensor* gq = grad_of(self, 0);
                       Tensor* gk = grad_of(self, 1);
                       Tensor* gv = grad_of(self, 2);
                       Tensor* gb = has_bias ? grad_of(self, 3) : nullptr;
                       std::vector<double> ds(static_cast<std::size_t>(tk));
                       for (std::int64_t g = 0; g < groups; ++g) {
                         for (std::int64_t i = 0; i < tq; ++i) {
                           const double* p = probs->data() + (g * tq + i) * tk;
                           const double* go = self.grad.data().data() + (g * tq + i) * dv;
                           double dot = 0.0;
                           for (std::int64_t j = 0; j < tk; ++j) {
                             if (p[j] == 0.0) {
                               ds[static_cast<std::size_t>(j)] = 0.0;
                               continue;
                             }
                             const double* vr = vd + (g * tk + j) * dv;
                             double dp = 0.0;
                             for (std::int64_t c = 0; c < dv; ++c) dp += go[c] * vr[c];
                             ds[static_cast<std::size_t>(j)] = dp;
                             dot += dp * p[j];
                             if (gv) {
                               double* gvr = gv->data().data() + (g * tk + j) * dv;
                               for (std::int64_t c = 0; c < dv; ++c) gvr[c] += p[j] * go[c];
                             }
                           }
                           for (std::int64_t j = 0; j < tk; ++j) {
                             double& s = ds[static_cast<std::size_t>(j)];
                             s = p[j] == 0.0 ? 0.0 : p[j] * (s - dot);
                           }
                           if (gb) {
                             double* gbr = gb->data().data() + ((g % heads) * tq + i) * tk;
                             for (std::int64_t j = 0; j < tk; ++j) gbr[j] += ds[static_cast<std::size_t>(j)];
                           }
                           if (gq) {
                             double* gqr = gq->data().data() + (g * tq + i) * d;
                             for (std::int64_t j = 0; j < tk; ++j) {
                               const double s = ds[static_cast<std::size_t>(j)] * scale;
                               if (s == 0.0) continue;
                               const double* kr = kd + (g * tk + j) * d;
                               for (std::int64_t c = 0; c < d; ++c) gqr[c] += s * kr[c];
                             }
                           }
                           if (gk) {
                             const double* qr = qd + (g * tq + i) * d;
                             for (std::int64_t j = 0; j < tk; ++j) {
                               const double s = ds[static_cast<std::size_t>(j)] * scale;
                               if (s == 0.0) continue;
                               double* gkr = gk->data().data() + (g * tk + j) * d;
                               for (std::int64_t c = 0; c < d; ++c) gkr[c] += s * qr[c];
                             }
                           }
                         }
                       }
                     });
}

}  // namespace utr::ops
