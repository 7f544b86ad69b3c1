#pragma once

#include <span>
#include <vector>

#include "gat/tensor.hpp"

// Differentiable operations. Each records itself on the current tape when any
// input requires gradients; otherwise it only computes values.
//
// "Rows" always means every axis but the last: a [B x R x C] tensor has B*R
// rows of length C for the row-wise operations.

namespace gat {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kJsLogFloor = 1e-12;

/// [R x S] . [S x C], or batched [B x R x S] . [B x S x C].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swap the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& x);
/// Softmax along the last axis, with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
/// Per-row normalization followed by the affine map gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// x[..., C] + bias[C], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// Column-wise juxtaposition of [R x c_i] parts (rank-1 parts join end to end).
Tensor concat_cols(std::span<const Tensor> parts);
/// Row-wise juxtaposition along the second-to-last axis. Rank-1 parts are
/// treated as single rows; rank-3 parts must share the leading extent.
Tensor concat_rows(std::span<const Tensor> parts);
/// Rows [start, start + len) along the second-to-last axis.
Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len);

/// [T x D] -> [M x T x D/M]; head m owns columns [m*D/M, (m+1)*D/M).
Tensor split_heads(const Tensor& x, std::size_t heads);
/// [M x T x d] -> [T x M*d]; inverse of split_heads.
Tensor merge_heads(const Tensor& x);

/// Column means of a [T x D] tensor, as a rank-1 [D] tensor.
Tensor mean_rows(const Tensor& x);
/// Mean over the leading axis: [B x R x C] -> [R x C].
Tensor mean_leading(const Tensor& x);
/// Stack equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);
/// Entry `index` of the leading axis.
Tensor select(const Tensor& x, std::size_t index);
/// Softmax across the leading axis, independently at every trailing position.
Tensor softmax_leading(const Tensor& x);

Tensor sum(const Tensor& x);
/// Frobenius (L2) norm of all entries. The gradient at 0 is taken as 0.
Tensor frobenius_norm(const Tensor& x);
/// Mean over rows of the Jensen-Shannon divergence between matching rows of
/// two row-stochastic tensors (natural log, logs floored at kJsLogFloor).
Tensor js_divergence_rows(const Tensor& p, const Tensor& q);
/// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets.
Tensor bce_loss(const Tensor& logits, const Tensor& targets);

}  // namespace gat
