#include "utr/optimizer.hpp"

#include <cmath>

namespace utr {

Adam::Adam(const ParamSet& params, AdamSettings settings) : params_(&params), settings_(settings) {
  for (const auto& p : params.items()) {
    m_.emplace(p.name, Tensor(p.var.shape(), 0.0));
    v_.emplace(p.name, Tensor(p.var.shape(), 0.0));
  }
}

void Adam::step() {
  ++t_;
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& p : params_->items()) {
    Var var = p.var;
    Tensor& m = m_.at(p.name);
    Tensor& v = v_.at(p.name);
    Tensor& w = var.mutable_value();
    const bool has_grad = var.has_grad();
    const Tensor grad = has_grad ? var.grad() : Tensor();
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      double g = has_grad ? grad[i] : 0.0;
      if (settings_.weight_decay != 0.0) g += settings_.weight_decay * w[i];
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g * g);
      const double update = settings_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + settings_.eps);
      w[i] = static_cast<float>(w[i] - update);
    }
  }
}

std::map<std::string, Tensor> Adam::state() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : m_) out.emplace(name + ".m", t);
  for (const auto& [name, t] : v_) out.emplace(name + ".v", t);
  return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& moments, std::int64_t steps_taken) {
  for (auto& [name, t] : m_) {
    auto it = moments.find(name + ".m");
    if (it == moments.end()) throw std::out_of_range("optimizer state lacks " + name + ".m");
    require_shape(it->second, t.shape(), (name + ".m").c_str());
    t = it->second;
  }
  for (auto& [name, t] : v_) {
    auto it = moments.find(name + ".v");
    if (it == moments.end()) throw std::out_of_range("optimizer state lacks " + name + ".v");
    require_shape(it->second, t.shape(), (name + ".v").c_str());
    t = it->second;
  }
  t_ = steps_taken;
}

}  // namespace utr
