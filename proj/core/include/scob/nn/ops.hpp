#pragma once

#include <span>
#include <vector>

#include "scob/nn/tensor.hpp"

namespace scob::nn {

// Differentiable ops on row-major 2-D matrices. Rows are sequence positions
// (or patches), columns are features.

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

// a + row, with `row` (1 x cols) broadcast over every row of `a`.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row);

template <typename T>
Var<T> scale(const Var<T>& a, T s);

template <typename T>
Var<T> relu(const Var<T>& a);

// tanh approximation.
template <typename T>
Var<T> gelu(const Var<T>& a);

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// Multi-head scaled dot-product attention over already-projected q, k, v
/// (heads are contiguous column blocks). With `causal`, query i only sees
/// keys 0..i (requires q and k of equal length).
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, bool causal);

// Rows of `table` selected by `ids` (embedding lookup, position gather).
template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const int> ids);

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);

// First `n` rows.
template <typename T>
Var<T> head_rows(const Var<T>& a, Eigen::Index n);

// Each row divided by max(||row||, eps).
template <typename T>
Var<T> l2_normalize_rows(const Var<T>& a, T eps = T(1e-12));

// Mean of all entries, as a 1x1 value.
template <typename T>
Var<T> mean_all(const Var<T>& a);

}  // namespace scob::nn
