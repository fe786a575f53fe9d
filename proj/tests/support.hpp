#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "maskcond/autograd.hpp"
#include "maskcond/ops.hpp"
#include "maskcond/rng.hpp"

namespace maskcond::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

/// Contracts `out` with fixed random weights so every output element
/// contributes to the scalar.
inline Var probe(const Var& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ops::sum(ops::mul(out, Var::constant(random_tensor(out.shape(), rng))));
}

struct GradReport {
  double max_rel = 0.0;
  std::string where;
};

/// Central differences of `loss` with respect to every element of `leaves`,
/// compared to the reverse-mode gradient. rel = |a - n| / max(|a|, |n|, floor).
inline GradReport check_gradients(const std::function<Var()>& loss, std::vector<Var> leaves, double h = 1e-6,
                                  double floor = 1e-6, const std::vector<std::string>& names = {}) {
  for (auto& l : leaves) l.zero_grad();
  backward(loss());
  std::vector<Tensor> analytic;
  for (auto& l : leaves) analytic.push_back(l.grad().empty() ? Tensor(l.shape()) : l.grad());
  GradReport report;
  NoGradGuard guard;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    Tensor& value = leaves[i].mutable_value();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double saved = value[j];
      value[j] = saved + h;
      const double up = loss().item();
      value[j] = saved - h;
      const double down = loss().item();
      value[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][j];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > report.max_rel) {
        report.max_rel = rel;
        report.where = (i < names.size() ? names[i] : "leaf " + std::to_string(i)) + "[" + std::to_string(j) + "]";
      }
    }
  }
  return report;
}

}  // namespace maskcond::testing
