#pragma once

#include <cstddef>
#include <vector>

#include "mst/rng.hpp"
#include "mst/tensor.hpp"

namespace mst {

// Elementwise binary ops. `b` must have the same shape as `a` or a shape
// equal to a trailing suffix of it (including rank 0), in which case it is
// broadcast over the leading axes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
/// Exact GELU, x * Phi(x).
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

/// [m x k] . [k x n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x [m x k] . w [k x n] + b [n]
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
/// 2-D transpose.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
/// `length` entries of `axis` starting at `begin`.
template <typename T> Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t length);

/// Full reductions to a rank-0 scalar.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// Euclidean norm over the last axis; drops that axis. The gradient at a
/// zero vector is taken as zero.
template <typename T> Tensor<T> l2_norm(const Tensor<T>& a);

template <typename T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& a, std::size_t axis);

/// Normalizes over the last axis with the biased variance, then applies
/// gamma/beta of length C.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

/// Inverted dropout. Identity when not training or p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double p, RngState& rng, bool training);

/// x [H x W x Cin], w [k x k x Cin x Cout], b [Cout]; zero padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride, std::size_t padding);
/// x [H x W x C], square window, no padding.
template <typename T> Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kernel, std::size_t stride);

template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;  // w: [C x C], b: [C]
};

template <typename T>
struct AttentionResult {
  Tensor<T> out;   // [Lq x C]
  Tensor<T> attn;  // [heads x Lq x Lk], constant, rows sum to 1
};

/// Scaled dot-product attention over `heads` heads, concatenated and passed
/// through the output projection.
template <typename T>
AttentionResult<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        std::size_t heads, const AttentionParams<T>& params);

}  // namespace mst
