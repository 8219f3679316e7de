#pragma once

#include <map>
#include <string>
#include <vector>

#include "utr/autograd.hpp"
#include "utr/ops.hpp"
#include "utr/rng.hpp"

namespace utr {

struct NamedParam {
  std::string name;
  Var var;
};

/// Ordered registry of trainable tensors. Values are kept float32-exact so a
/// float32 checkpoint restores them bit for bit.
class ParamSet {
 public:
  Var add(const std::string& name, Tensor init);

  const std::vector<NamedParam>& items() const { return items_; }
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::int64_t total_elements() const;

  void zero_grad();
  std::map<std::string, Tensor> snapshot() const;
  void restore(const std::map<std::string, Tensor>& values);
  void set_requires_grad(bool on);

 private:
  std::vector<NamedParam> items_;
  std::map<std::string, std::size_t> index_;
};

struct Linear {
  Var weight;  // (in, out)
  Var bias;    // (out), may be undefined
  Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }
};

Linear make_linear(ParamSet& params, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                   double stddev = 0.02, bool with_bias = true);

struct LayerNorm {
  Var gamma;
  Var beta;
  double eps = 1e-5;
  Var operator()(const Var& x) const { return ops::layer_norm(x, gamma, beta, eps); }
};

LayerNorm make_layer_norm(ParamSet& params, const std::string& name, std::int64_t channels);

/// Square-kernel 2-D convolution on (B, H, W, Cin) maps, lowered to an
/// im2col gather plus a matmul. Zero padding on all sides.
struct Conv2d {
  Linear proj;  // (k*k*Cin, Cout)
  std::int64_t kernel = 3;
  std::int64_t stride = 1;
  std::int64_t pad = 1;
  std::int64_t in_channels = 0;

  Var operator()(const Var& x) const;
};

Conv2d make_conv2d(ParamSet& params, const std::string& name, std::int64_t in_channels, std::int64_t out_channels,
                   std::int64_t kernel, std::int64_t stride, std::int64_t pad, Rng& rng, double stddev);

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride, std::int64_t pad);

}  // namespace utr
