#pragma once

#include <span>
#include <vector>

#include "maskcond/autograd.hpp"

/// Differentiable tensor operations. Every op validates shapes and throws
/// Errc::ShapeMismatch on disagreement. Image tensors are (B, C, H, W).
namespace maskcond::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var relu(const Var& a);
Var silu(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);

/// Mean of squared differences over all elements.
Var mse(const Var& a, const Var& b);

// Rank-2 ops.
Var matmul(const Var& a, const Var& b);
/// x (B, in) times w (in, out) plus bias (out).
Var linear(const Var& x, const Var& w, const Var& bias);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& x, std::size_t start, std::size_t len);
/// Row lookup: out[b] = table[rows[b]].
Var gather_rows(const Var& table, std::span<const std::size_t> rows);
/// out[b] = values[b] * w + bias, with constant scalar inputs per row.
Var scalar_affine(std::span<const double> values, const Var& w, const Var& bias);
/// Batch normalization over axis 0 of (B, C). Training mode normalizes with
/// batch statistics and updates the running estimates in place.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               bool training, double momentum = 0.1, double eps = 1e-5);

// Image ops.
/// Stride-1 convolution, w is (Cout, Cin, k, k), zero padding on all sides.
Var conv2d(const Var& x, const Var& w, const Var& bias, std::size_t padding);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, std::size_t groups, double eps = 1e-5);
Var avg_pool2(const Var& x);
Var upsample2(const Var& x);
Var concat_channels(const std::vector<Var>& parts);
/// (B, C) -> (B, C, H, W) with every spatial position holding the same vector.
Var broadcast_spatial(const Var& x, std::size_t height, std::size_t width);
/// x (B, C, H, W) plus per-(batch, channel) offsets v (B, C).
Var add_channelwise(const Var& x, const Var& v);
/// (B, C, H, W) -> (B*H*W, C), token-major.
Var to_tokens(const Var& x);
Var from_tokens(const Var& x, std::size_t batch, std::size_t height, std::size_t width);
/// Multi-head scaled dot-product self-attention over rows of (B*L, C)
/// inputs grouped into `batch` sequences of length L.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t batch, std::size_t heads);

}  // namespace maskcond::ops
