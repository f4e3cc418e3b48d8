/**
 * @file ops.hpp
 * @brief Differentiable tensor operations used by the networks and losses.
 *
 * All tensors are NCHW. Shape violations throw InputError.
 */
#pragma once

#include <cstdint>
#include <vector>

#include "skf/autograd.hpp"

namespace skf::ops {

// ---- elementwise --------------------------------------------------------

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope);
/// Exact (erf-based) GELU.
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
/// Cuts the graph: same value, no gradient flows back.
template <typename T> Var<T> detach(const Var<T>& x);

// ---- convolution and resampling -----------------------------------------

/// 2-D cross-correlation. weight is (Cout, Cin, k, k); bias is (1, Cout, 1, 1)
/// or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);

template <typename T> Var<T> upsample_nearest(const Var<T>& x, int factor);
template <typename T> Var<T> avg_pool(const Var<T>& x, int factor);
/// (N, C, H, W) -> (N, C, 1, 1) mean over space.
template <typename T> Var<T> spatial_mean(const Var<T>& x);
/// (N, C, H, W) -> (N, C*r*r, H/r, W/r), lossless.
template <typename T> Var<T> space_to_depth(const Var<T>& x, int r);
/// Inverse of space_to_depth.
template <typename T> Var<T> depth_to_space(const Var<T>& x, int r);

// ---- structural ---------------------------------------------------------

template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> concat_batch(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_batch(const Var<T>& x, int index);
/// out[i] = x[indices[i]], or 0 where indices[i] < 0.
template <typename T>
Var<T> gather(const Var<T>& x, const std::vector<std::int64_t>& indices, Shape out_shape);

// ---- normalization and attention ----------------------------------------

/// Normalizes over channels at every (n, y, x); gamma/beta are (1, C, 1, 1).
template <typename T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// Per sample: reshape q, k to C x (h*w) and return q * k^T * factor as (N, 1, C, C).
template <typename T> Var<T> channel_gram(const Var<T>& q, const Var<T>& k, T factor);
/// Softmax along the last axis of every row.
template <typename T> Var<T> softmax_rows(const Var<T>& x);
/// Per sample: A (1, C, C) times V reshaped to C x (h*w).
template <typename T> Var<T> channel_mix(const Var<T>& attention, const Var<T>& v);

// ---- reductions and losses ----------------------------------------------

template <typename T> Var<T> sum_all(const Var<T>& x);
template <typename T> Var<T> mean_all(const Var<T>& x);
/// mean |x - target|
template <typename T> Var<T> l1_loss(const Var<T>& x, const Tensor<T>& target);
/// mean (x - target)^2
template <typename T> Var<T> mse_loss(const Var<T>& x, const Tensor<T>& target);
/// mean (x - label)^2
template <typename T> Var<T> mse_to_label(const Var<T>& x, T label);

}  // namespace skf::ops
