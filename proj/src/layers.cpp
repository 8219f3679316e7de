#include "utr/layers.hpp"

#include <stdexcept>

namespace utr {

Var ParamSet::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
  round_to_float32(init);
  Var v = parameter(std::move(init));
  index_[name] = items_.size();
  items_.push_back({name, v});
  return v;
}

const Var& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return items_[it->second].var;
}

std::int64_t ParamSet::total_elements() const {
  std::int64_t n = 0;
  for (const auto& p : items_) n += p.var.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : items_) p.var.zero_grad();
}

std::map<std::string, Tensor> ParamSet::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& p : items_) out.emplace(p.name, p.var.value());
  return out;
}

void ParamSet::restore(const std::map<std::string, Tensor>& values) {
  for (auto& p : items_) {
    auto it = values.find(p.name);
    if (it == values.end()) throw std::out_of_range("snapshot lacks parameter: " + p.name);
    require_shape(it->second, p.var.shape(), p.name.c_str());
    p.var.mutable_value() = it->second;
  }
}

void ParamSet::set_requires_grad(bool on) {
  for (auto& p : items_) p.var.set_requires_grad(on);
}

Linear make_linear(ParamSet& params, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                   double stddev, bool with_bias) {
  Tensor w(Shape{in, out});
  for (double& v : w.storage()) v = rng.truncated_normal(stddev);
  Linear l;
  l.weight = params.add(name + ".weight", std::move(w));
  if (with_bias) l.bias = params.add(name + ".bias", Tensor(Shape{out}, 0.0));
  return l;
}

LayerNorm make_layer_norm(ParamSet& params, const std::string& name, std::int64_t channels) {
  LayerNorm ln;
  ln.gamma = params.add(name + ".gamma", Tensor(Shape{channels}, 1.0));
  ln.beta = params.add(name + ".beta", Tensor(Shape{channels}, 0.0));
  return ln;
}

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride, std::int64_t pad) {
  const std::int64_t span = in + 2 * pad - kernel;
  if (span < 0) throw ShapeError("convolution input of size " + std::to_string(in) + " is smaller than its kernel");
  return span / stride + 1;
}

Var Conv2d::operator()(const Var& x) const {
  if (x.value().rank() != 4 || x.dim(3) != in_channels) {
    throw ShapeError("conv2d: expected (B, H, W, " + std::to_string(in_channels) + "), got " + shape_str(x.shape()));
  }
  const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = in_channels;
  const std::int64_t ho = conv_output_size(h, kernel, stride, pad);
  const std::int64_t wo = conv_output_size(w, kernel, stride, pad);
  const std::int64_t cols = kernel * kernel * c;
  auto idx = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(b * ho * wo * cols));
  std::size_t i = 0;
  for (std::int64_t n = 0; n < b; ++n)
    for (std::int64_t oy = 0; oy < ho; ++oy)
      for (std::int64_t ox = 0; ox < wo; ++ox)
        for (std::int64_t ky = 0; ky < kernel; ++ky)
          for (std::int64_t kx = 0; kx < kernel; ++kx) {
            const std::int64_t y = oy * stride + ky - pad;
            const std::int64_t xx = ox * stride + kx - pad;
            const bool inside = y >= 0 && y < h && xx >= 0 && xx < w;
            for (std::int64_t k = 0; k < c; ++k) {
              (*idx)[i++] = inside ? ((n * h + y) * w + xx) * c + k : -1;
            }
          }
  Var cols_var = ops::gather(x, Shape{b, ho, wo, cols}, std::move(idx));
  return proj(cols_var);
}

Conv2d make_conv2d(ParamSet& params, const std::string& name, std::int64_t in_channels, std::int64_t out_channels,
                   std::int64_t kernel, std::int64_t stride, std::int64_t pad, Rng& rng, double stddev) {
  Conv2d c;
  c.proj = make_linear(params, name, kernel * kernel * in_channels, out_channels, rng, stddev);
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  c.in_channels = in_channels;
  return c;
}

}  // namespace utr
