#include "maskcond/nn.hpp"

#include <cmath>

#include "maskcond/error.hpp"
#include "maskcond/ops.hpp"

namespace maskcond::nn {

Var ParameterSet::add(std::string name, Tensor init) {
  for (const auto& p : params_) {
    if (p.name == name) throw Error(Errc::InvalidConfig, "duplicate parameter name " + name);
  }
  Var v = Var::leaf(std::move(init));
  params_.push_back({std::move(name), v});
  return v;
}

const Var& ParameterSet::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.var;
  }
  throw Error(Errc::IndexOutOfRange, "no parameter named " + name);
}

std::size_t ParameterSet::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

bool ParameterSet::all_finite() const {
  for (const auto& p : params_) {
    if (!p.var.value().all_finite()) return false;
  }
  return true;
}

Tensor uniform_tensor(Shape shape, double half_width, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-half_width, half_width);
  return t;
}

Linear::Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = params.add(name + ".weight", uniform_tensor({in, out}, bound, rng));
  bias = params.add(name + ".bias", uniform_tensor({out}, bound, rng));
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, weight, bias); }

Conv2d::Conv2d(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
               Rng& rng)
    : padding(kernel / 2) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight = params.add(name + ".weight", uniform_tensor({out, in, kernel, kernel}, bound, rng));
  bias = params.add(name + ".bias", uniform_tensor({out}, bound, rng));
}

Var Conv2d::operator()(const Var& x) const { return ops::conv2d(x, weight, bias, padding); }

std::size_t default_groups(std::size_t channels) {
  for (std::size_t g = 8; g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

GroupNorm::GroupNorm(ParameterSet& params, const std::string& name, std::size_t channels)
    : groups(default_groups(channels)) {
  gamma = params.add(name + ".gamma", Tensor::ones({channels}));
  beta = params.add(name + ".beta", Tensor::zeros({channels}));
}

Var GroupNorm::operator()(const Var& x) const { return ops::group_norm(x, gamma, beta, groups); }

Adam::Adam(const ParameterSet& params, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params.items()) {
    vars_.push_back(p.var);
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < vars_.size(); ++i) {
    Var& var = vars_[i];
    const Tensor& g = var.grad();
    if (g.shape() != var.shape()) continue;  // never received a gradient
    Tensor& w = var.mutable_value();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
    }
  }
}

}  // namespace maskcond::nn
