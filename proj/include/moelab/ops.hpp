// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "moelab/tensor.hpp"

namespace moelab {

// Elementwise arithmetic. Operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

/// [r x c] + [c], the bias broadcast over rows.
Tensor add_rowvec(const Tensor& m, const Tensor& v);

/// [r x c] with row i multiplied by s[i]; s is [r] or [r x 1].
Tensor scale_rows(const Tensor& m, const Tensor& s);

/// Standard matrix product [m x k] * [k x n]. Evaluated one output row at
/// a time so that the result for any given row is bitwise independent of
/// which other rows are present in the batch (the grouped-dispatch
/// equivalence contract relies on this).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

Tensor slice_rows(const Tensor& a, Index begin, Index count);
Tensor slice_cols(const Tensor& a, Index begin, Index count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// out.row(i) = a.row(idx[i]). Duplicate indices are allowed; their
/// gradient contributions accumulate in index order.
Tensor gather_rows(const Tensor& a, std::vector<Index> idx);

/// Inverse of gather for a permutation-like index set: places values.row(i)
/// at out.row(idx[i]) in a [num_rows x c] zero tensor. Indices must be
/// unique and in range.
Tensor scatter_rows(const Tensor& values, std::vector<Index> idx, Index num_rows);

/// [r x 1] with out[i] = m(i, col_idx[i]).
Tensor take_per_row(const Tensor& m, std::vector<Index> col_idx);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Column means of [r x c] -> [c].
Tensor mean_rows(const Tensor& a);

/// Softmax along `axis` (negative axes count from the end). The axis max
/// is subtracted before exponentiation, so arbitrarily large finite inputs
/// stay finite. Non-finite input raises NumericError.
Tensor softmax(const Tensor& a, int axis = -1);

/// Per-row layer normalization over the last dimension with affine
/// parameters: y = gamma * (x - mean) / sqrt(var + eps) + beta, population
/// variance. gamma and beta must match the last dimension.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& a);

/// Rows scaled to unit length: x.row(i) / max(||x.row(i)||, eps). The max
/// (rather than an additive epsilon) keeps the result exactly invariant to
/// positive rescaling of non-degenerate rows, which the relation losses
/// rely on.
Tensor row_normalize(const Tensor& a, double eps = 1e-8);

/// cos(a, b) with eps added to each norm before dividing, so zero vectors
/// are well-defined.
Tensor cosine_sim(const Tensor& a, const Tensor& b, double eps = 1e-8);

/// KL(p || q) = sum p_i * ln(p_i / q_i), with q clamped at 1e-12 before the
/// log and 0 * ln 0 treated as 0. Both inputs must sum to 1 within 1e-9.
Tensor kl_div(const Tensor& p, const Tensor& q);

/// Mean negative log-softmax probability of `targets` over the positions
/// where mask is nonzero. Throws if the mask selects nothing.
Tensor cross_entropy_masked(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<std::uint8_t>& mask);

/// Inverted dropout with keep-probability 1 - p; mask drawn from `rng` at
/// call time.
Tensor dropout(const Tensor& a, double p, Rng& rng);

/// Row-wise argmax over values; ties resolved to the lowest index. Not a
/// graph operation (selection carries no gradient).
std::vector<Index> argmax_rows(const Tensor& m);

}  // namespace moelab
