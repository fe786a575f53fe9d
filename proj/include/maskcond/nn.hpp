#pragma once

#include <string>
#include <vector>

#include "maskcond/autograd.hpp"
#include "maskcond/rng.hpp"

namespace maskcond::nn {

struct NamedParameter {
  std::string name;
  Var var;
};

/// Ordered registry of trainable leaves. Order is registration order and is
/// the order used by the optimizer and by checkpoints.
class ParameterSet {
 public:
  Var add(std::string name, Tensor init);

  const std::vector<NamedParameter>& items() const noexcept { return params_; }
  std::vector<NamedParameter>& items() noexcept { return params_; }
  const Var& get(const std::string& name) const;
  std::size_t numel() const;
  void zero_grad();
  bool all_finite() const;

 private:
  std::vector<NamedParameter> params_;
};

/// Zero-mean uniform values on [-half_width, half_width].
Tensor uniform_tensor(Shape shape, double half_width, Rng& rng);

/// Affine map y = x W + b with W of shape (in, out); fan-in scaled init.
struct Linear {
  Var weight;
  Var bias;

  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Var operator()(const Var& x) const;
  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }
};

struct Conv2d {
  Var weight;
  Var bias;
  std::size_t padding = 0;

  Conv2d() = default;
  Conv2d(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         Rng& rng);
  Var operator()(const Var& x) const;
  std::size_t in_channels() const { return weight.shape()[1]; }
  std::size_t out_channels() const { return weight.shape()[0]; }
};

struct GroupNorm {
  Var gamma;
  Var beta;
  std::size_t groups = 1;

  GroupNorm() = default;
  GroupNorm(ParameterSet& params, const std::string& name, std::size_t channels);
  Var operator()(const Var& x) const;
};

/// Largest group count <= 8 dividing `channels`.
std::size_t default_groups(std::size_t channels);

/// Adaptive-moment optimizer with bias correction.
class Adam {
 public:
  explicit Adam(const ParameterSet& params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step();
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  std::vector<Var> vars_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

}  // namespace maskcond::nn
