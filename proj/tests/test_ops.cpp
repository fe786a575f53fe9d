#include <gtest/gtest.h>

#include <cmath>

#include "maskcond/error.hpp"
#include "maskcond/ops.hpp"
#include "support.hpp"

using namespace maskcond;
using maskcond::testing::check_gradients;
using maskcond::testing::probe;
using maskcond::testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

Var leaf(const Shape& s, Rng& rng, double scale = 1.0) { return Var::leaf(random_tensor(s, rng, scale)); }

// Values bounded away from zero so that relu's kink never sits inside the
// finite-difference stencil.
Var leaf_away_from_zero(const Shape& s, Rng& rng) {
  Tensor t = random_tensor(s, rng);
  for (auto& v : t.data()) v = v >= 0 ? v + 0.1 : v - 0.1;
  return Var::leaf(std::move(t));
}

}  // namespace

TEST(Ops, ElementwiseValues) {
  auto a = Var::constant(Tensor::from({1.0, -2.0, 3.0}));
  auto b = Var::constant(Tensor::from({0.5, 4.0, -1.0}));
  EXPECT_EQ(ops::add(a, b).value(), Tensor::from({1.5, 2.0, 2.0}));
  EXPECT_EQ(ops::sub(a, b).value(), Tensor::from({0.5, -6.0, 4.0}));
  EXPECT_EQ(ops::mul(a, b).value(), Tensor::from({0.5, -8.0, -3.0}));
  EXPECT_EQ(ops::relu(a).value(), Tensor::from({1.0, 0.0, 3.0}));
  EXPECT_EQ(ops::scale(a, 2.0).value(), Tensor::from({2.0, -4.0, 6.0}));
  EXPECT_EQ(ops::add_scalar(a, 1.0).value(), Tensor::from({2.0, -1.0, 4.0}));
  EXPECT_EQ(ops::square(a).value(), Tensor::from({1.0, 4.0, 9.0}));
  EXPECT_DOUBLE_EQ(ops::sum(a).item(), 2.0);
  EXPECT_DOUBLE_EQ(ops::mean(a).item(), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(ops::mse(a, b).item(), (0.25 + 36.0 + 16.0) / 3.0);
  EXPECT_NEAR(ops::silu(a).value()[1], -2.0 / (1.0 + std::exp(2.0)), 1e-15);
  EXPECT_NEAR(ops::exp(a).value()[2], std::exp(3.0), 1e-12);
}

TEST(Ops, ShapeMismatchThrows) {
  auto a = Var::constant(Tensor({2, 3}));
  auto b = Var::constant(Tensor({3, 2}));
  EXPECT_THROW(ops::add(a, b), Error);
  EXPECT_THROW(ops::matmul(a, a), Error);
  try {
    ops::mul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
}

TEST(Ops, MatmulAndLinearValues) {
  auto a = Var::constant(Tensor({2, 2}, {1, 2, 3, 4}));
  auto b = Var::constant(Tensor({2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(ops::matmul(a, b).value(), Tensor({2, 2}, {19, 22, 43, 50}));
  auto bias = Var::constant(Tensor::from({1.0, -1.0}));
  EXPECT_EQ(ops::linear(a, b, bias).value(), Tensor({2, 2}, {20, 21, 44, 49}));
}

TEST(Ops, ConcatSliceGather) {
  auto a = Var::constant(Tensor({2, 1}, {1, 2}));
  auto b = Var::constant(Tensor({2, 2}, {3, 4, 5, 6}));
  auto c = ops::concat_cols({a, b});
  EXPECT_EQ(c.value(), Tensor({2, 3}, {1, 3, 4, 2, 5, 6}));
  EXPECT_EQ(ops::slice_cols(c, 1, 2).value(), b.value());
  const std::size_t rows[] = {1, 1, 0};
  EXPECT_EQ(ops::gather_rows(b, rows).value(), Tensor({3, 2}, {5, 6, 5, 6, 3, 4}));
  const double values[] = {2.0, -1.0};
  auto w = Var::constant(Tensor::from({1.0, 3.0}));
  auto bias = Var::constant(Tensor::from({0.5, 0.0}));
  EXPECT_EQ(ops::scalar_affine(values, w, bias).value(), Tensor({2, 2}, {2.5, 6.0, -0.5, -3.0}));
}

TEST(Ops, Conv2dMatchesDirectSum) {
  Rng rng(1);
  auto x = leaf({2, 3, 5, 4}, rng);
  auto w = leaf({2, 3, 3, 3}, rng);
  auto b = leaf({2}, rng);
  const Tensor out = ops::conv2d(x, w, b, 1).value();
  ASSERT_EQ(out.shape(), (Shape{2, 2, 5, 4}));
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t o = 0; o < 2; ++o) {
      for (long i = 0; i < 5; ++i) {
        for (long j = 0; j < 4; ++j) {
          double s = b.value()[o];
          for (std::size_t c = 0; c < 3; ++c) {
            for (long di = 0; di < 3; ++di) {
              for (long dj = 0; dj < 3; ++dj) {
                const long yi = i + di - 1, xj = j + dj - 1;
                if (yi < 0 || yi >= 5 || xj < 0 || xj >= 4) continue;
                s += w.value()[((o * 3 + c) * 3 + di) * 3 + dj] * x.value()[((n * 3 + c) * 5 + yi) * 4 + xj];
              }
            }
          }
          EXPECT_NEAR(out[((n * 2 + o) * 5 + i) * 4 + j], s, 1e-12);
        }
      }
    }
  }
}

TEST(Ops, PoolUpsampleBroadcastValues) {
  auto x = Var::constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(ops::avg_pool2(x).value(), Tensor({1, 1, 1, 1}, {2.5}));
  EXPECT_EQ(ops::upsample2(x).value(),
            Tensor({1, 1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
  auto v = Var::constant(Tensor({1, 2}, {7, -3}));
  const Tensor bc = ops::broadcast_spatial(v, 3, 2).value();
  ASSERT_EQ(bc.shape(), (Shape{1, 2, 3, 2}));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(bc[i], 7.0);
    EXPECT_EQ(bc[6 + i], -3.0);
  }
}

TEST(Ops, TokensRoundTrip) {
  Rng rng(2);
  auto x = leaf({2, 3, 2, 4}, rng);
  auto t = ops::to_tokens(x);
  ASSERT_EQ(t.shape(), (Shape{16, 3}));
  EXPECT_EQ(t.value().at(5, 2), x.value()[(0 * 3 + 2) * 8 + 5]);
  EXPECT_EQ(ops::from_tokens(t, 2, 2, 4).value(), x.value());
}

TEST(Ops, GroupNormNormalizesGroups) {
  Rng rng(3);
  auto x = leaf({2, 4, 3, 3}, rng, 3.0);
  auto gamma = Var::constant(Tensor::ones({4}));
  auto beta = Var::constant(Tensor::zeros({4}));
  const Tensor y = ops::group_norm(x, gamma, beta, 2).value();
  for (std::size_t g = 0; g < 4; ++g) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 18; ++i) m += y[g * 18 + i];
    m /= 18.0;
    for (std::size_t i = 0; i < 18; ++i) v += (y[g * 18 + i] - m) * (y[g * 18 + i] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 18.0, 1.0, 1e-3);
  }
}

TEST(Ops, BatchNormTrainingAndInference) {
  auto x = Var::constant(Tensor({4, 2}, {1, 10, 2, 20, 3, 30, 4, 40}));
  auto gamma = Var::constant(Tensor::ones({2}));
  auto beta = Var::constant(Tensor::zeros({2}));
  Tensor rm = Tensor::zeros({2}), rv = Tensor::ones({2});
  const Tensor y = ops::batch_norm(x, gamma, beta, rm, rv, true, 0.1).value();
  EXPECT_NEAR(y.at(0, 0), -1.5 / std::sqrt(1.25 + 1e-5), 1e-12);
  EXPECT_NEAR(rm[0], 0.25, 1e-12);
  EXPECT_NEAR(rm[1], 2.5, 1e-12);
  // Unbiased batch variance feeds the running estimate.
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-12);
  const Tensor rm_before = rm;
  const Tensor z = ops::batch_norm(x, gamma, beta, rm, rv, false, 0.1).value();
  EXPECT_EQ(rm, rm_before);
  EXPECT_NEAR(z.at(0, 0), (1.0 - 0.25) / std::sqrt(rv[0] + 1e-5), 1e-12);
}

TEST(Ops, AttentionRowsAreConvexCombinations) {
  Rng rng(4);
  auto q = leaf({6, 4}, rng), k = leaf({6, 4}, rng);
  auto v = Var::constant(Tensor::ones({6, 4}));
  const Tensor out = ops::attention(q, k, v, 2, 2).value();
  for (double o : out.data()) EXPECT_NEAR(o, 1.0, 1e-12);
}

TEST(OpsGradient, Elementwise) {
  Rng rng(10);
  auto a = leaf_away_from_zero({3, 4}, rng), b = leaf({3, 4}, rng);
  auto f = [&] {
    Var y = ops::add(ops::mul(ops::relu(a), ops::silu(b)), ops::sub(ops::exp(ops::scale(a, 0.3)), ops::square(b)));
    return ops::add(probe(ops::add_scalar(y, 0.5)), ops::mse(a, b));
  };
  EXPECT_LT(check_gradients(f, {a, b}).max_rel, kTol);
}

TEST(OpsGradient, ReductionsAndReshape) {
  Rng rng(11);
  auto a = leaf({2, 6}, rng);
  auto f = [&] { return ops::add(ops::mean(ops::square(a)), probe(ops::reshape(a, {3, 4}))); };
  EXPECT_LT(check_gradients(f, {a}).max_rel, kTol);
}

TEST(OpsGradient, LinearAlgebra) {
  Rng rng(12);
  auto x = leaf({3, 4}, rng), w = leaf({4, 5}, rng), b = leaf({5}, rng), m = leaf({5, 2}, rng);
  auto f = [&] { return probe(ops::matmul(ops::linear(x, w, b), m)); };
  EXPECT_LT(check_gradients(f, {x, w, b, m}).max_rel, kTol);
}

TEST(OpsGradient, ConcatSliceGatherAffine) {
  Rng rng(13);
  auto a = leaf({3, 2}, rng), table = leaf({4, 3}, rng), w = leaf({2}, rng), bias = leaf({2}, rng);
  const std::size_t rows[] = {3, 0, 3};
  const double values[] = {0.2, -1.0, 0.7};
  auto f = [&] {
    Var c = ops::concat_cols({a, ops::gather_rows(table, rows), ops::scalar_affine(values, w, bias)});
    return ops::add(probe(c), probe(ops::slice_cols(c, 1, 4), 7));
  };
  EXPECT_LT(check_gradients(f, {a, table, w, bias}).max_rel, kTol);
}

TEST(OpsGradient, BatchNormTraining) {
  Rng rng(14);
  auto x = leaf({5, 3}, rng), gamma = leaf({3}, rng), beta = leaf({3}, rng);
  auto f = [&] {
    Tensor rm = Tensor::zeros({3}), rv = Tensor::ones({3});
    return probe(ops::batch_norm(x, gamma, beta, rm, rv, true));
  };
  EXPECT_LT(check_gradients(f, {x, gamma, beta}).max_rel, kTol);
}

TEST(OpsGradient, Conv2d) {
  Rng rng(15);
  auto x = leaf({2, 2, 4, 5}, rng), w = leaf({3, 2, 3, 3}, rng), b = leaf({3}, rng);
  auto w1 = leaf({2, 3, 1, 1}, rng), b1 = leaf({2}, rng);
  auto f = [&] { return probe(ops::conv2d(ops::conv2d(x, w, b, 1), w1, b1, 0)); };
  EXPECT_LT(check_gradients(f, {x, w, b, w1, b1}).max_rel, kTol);
}

TEST(OpsGradient, GroupNorm) {
  Rng rng(16);
  auto x = leaf({2, 4, 3, 3}, rng), gamma = leaf({4}, rng), beta = leaf({4}, rng);
  auto f = [&] { return probe(ops::group_norm(x, gamma, beta, 2)); };
  EXPECT_LT(check_gradients(f, {x, gamma, beta}).max_rel, kTol);
}

TEST(OpsGradient, SpatialOps) {
  Rng rng(17);
  auto x = leaf({2, 3, 4, 4}, rng), v = leaf({2, 2}, rng), c = leaf({2, 3}, rng);
  auto f = [&] {
    Var y = ops::concat_channels({ops::upsample2(ops::avg_pool2(x)), ops::broadcast_spatial(v, 4, 4)});
    y = ops::add_channelwise(y, ops::concat_cols({c, v}));
    return probe(ops::from_tokens(ops::to_tokens(y), 2, 4, 4));
  };
  EXPECT_LT(check_gradients(f, {x, v, c}).max_rel, kTol);
}

TEST(OpsGradient, Attention) {
  Rng rng(18);
  auto q = leaf({8, 4}, rng), k = leaf({8, 4}, rng), v = leaf({8, 4}, rng);
  auto f = [&] { return probe(ops::attention(q, k, v, 2, 2)); };
  EXPECT_LT(check_gradients(f, {q, k, v}).max_rel, kTol);
}

TEST(Autograd, NoGradGuardDropsGraph) {
  auto a = Var::leaf(Tensor::from({1.0, 2.0}));
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    Var y = ops::mul(a, a);
    EXPECT_TRUE(y.node()->parents.empty());
  }
  EXPECT_TRUE(grad_enabled());
  Var y = ops::sum(ops::mul(a, a));
  backward(y);
  EXPECT_EQ(a.grad(), Tensor::from({2.0, 4.0}));
}

TEST(Autograd, GradientsAccumulateAcrossUses) {
  auto a = Var::leaf(Tensor::from({3.0}));
  backward(ops::sum(ops::add(ops::mul(a, a), a)));
  EXPECT_DOUBLE_EQ(a.grad()[0], 7.0);
}

TEST(Autograd, GradientCheckerDetectsWrongBackward) {
  auto a = Var::leaf(Tensor::from({0.5, -1.5}));
  auto f = [&] {
    Tensor v = a.value();
    for (auto& e : v.data()) e = e * e;
    Var y = make_node(std::move(v), {a}, [](Node& self) {
      Tensor& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.parents[0]->value[i];
    });
    return ops::sum(y);
  };
  EXPECT_GT(check_gradients(f, {a}).max_rel, 0.4);
}
