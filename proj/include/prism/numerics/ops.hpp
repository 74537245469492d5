#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "prism/numerics/autograd.hpp"

// Differentiable operations. Rank-2 variables are [rows x cols]; sequence batches are
// laid out as [batch*len x dim] with row index b*len + t. There is no implicit
// broadcasting except the bias row in `linear`.
namespace prism::num {

using RowMask = std::vector<std::uint8_t>;

template <class Real> Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <class Real> Var<Real> sub(const Var<Real>& a, const Var<Real>& b);
template <class Real> Var<Real> mul(const Var<Real>& a, const Var<Real>& b);
template <class Real> Var<Real> add_n(const std::vector<Var<Real>>& terms);

/// a * x + b, elementwise with scalar constants.
template <class Real> Var<Real> affine(const Var<Real>& x, Real a, Real b);

template <class Real> Var<Real> reshape(const Var<Real>& x, Shape shape);

/// [n x k] * [k x m]
template <class Real> Var<Real> matmul(const Var<Real>& a, const Var<Real>& b);
/// [n x k] * [m x k]^T
template <class Real> Var<Real> matmul_nt(const Var<Real>& a, const Var<Real>& b);
/// x [n x in] * weight [in x out] + bias [out]
template <class Real> Var<Real> linear(const Var<Real>& x, const Var<Real>& weight, const Var<Real>& bias);

template <class Real> Var<Real> relu(const Var<Real>& x);
/// log(1 + exp(x)), evaluated without overflow.
template <class Real> Var<Real> softplus(const Var<Real>& x);

template <class Real>
Var<Real> layer_norm(const Var<Real>& x, const Var<Real>& gamma, const Var<Real>& beta, Real eps);

template <class Real> Var<Real> softmax_rows(const Var<Real>& x);

/// Rows of `table` selected by `ids`. Gradient never reaches row `frozen_row` (padding).
template <class Real>
Var<Real> gather_rows(const Var<Real>& table, std::span<const std::int64_t> ids, std::int64_t frozen_row = -1);

template <class Real> Var<Real> concat_cols(const std::vector<Var<Real>>& parts);

/// Zeroes rows whose mask entry is 0 (value and gradient).
template <class Real> Var<Real> mask_rows(const Var<Real>& x, const RowMask& mask);

/// Multi-head scaled dot-product attention where query t attends to keys s <= t that
/// are valid. Queries with no valid key produce zero rows.
template <class Real>
Var<Real> causal_attention(const Var<Real>& q, const Var<Real>& k, const Var<Real>& v, std::size_t batch,
                           std::size_t len, std::size_t heads, const RowMask& valid);

/// out_t = mean of x_s over valid s <= t within each sequence; zero if none.
template <class Real>
Var<Real> causal_mean(const Var<Real>& x, std::size_t batch, std::size_t len, const RowMask& valid);

/// [batch*len x d] -> [batch x d], mean over valid positions (zero row if none).
template <class Real>
Var<Real> masked_mean_rows(const Var<Real>& x, std::size_t batch, std::size_t len, const RowMask& valid);

/// Per-row dot product: [n x d], [n x d] -> [n]
template <class Real> Var<Real> row_dot(const Var<Real>& a, const Var<Real>& b);

/// Per-row cosine similarity. Defined as 0 (with zero gradient) when either row norm is
/// below `zero_norm`.
template <class Real>
Var<Real> cosine_rows(const Var<Real>& a, const Var<Real>& b, Real zero_norm = Real(1e-12));

template <class Real> Var<Real> sum(const Var<Real>& x);
template <class Real> Var<Real> mean(const Var<Real>& x);
/// Mean over entries with mask 1; 0 when the mask is empty.
template <class Real> Var<Real> masked_mean(const Var<Real>& x, const RowMask& mask);

/// out_r = sum_j weights[r, j] * parts[j]_r for weights [n x J] and J parts of [n x d].
template <class Real>
Var<Real> weighted_sum(const Var<Real>& weights, const std::vector<Var<Real>>& parts);

/// Inverted dropout with keep-probability 1-p; identity when p == 0.
template <class Real> Var<Real> dropout(const Var<Real>& x, Real p, std::mt19937_64& rng);

}  // namespace prism::num
