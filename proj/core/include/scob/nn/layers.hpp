#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scob/nn/ops.hpp"
#include "scob/util/rng.hpp"

namespace scob::nn {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

// Trainable leaf filled from N(0, stddev^2), or with `fill` when stddev is 0.
template <typename T>
Var<T> make_param(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng, T fill = T(0));

template <typename T>
struct Linear {
  Var<T> weight;  // in x out
  Var<T> bias;    // 1 x out

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, Rng& rng, double init_std = 0.02);
  Var<T> operator()(const Var<T>& x) const { return add_row(matmul(x, weight), bias); }
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct LayerNorm {
  Var<T> gamma;
  Var<T> beta;

  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index dim);
  Var<T> operator()(const Var<T>& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  int heads = 1;

  MultiHeadAttention() = default;
  // Queries live in `dim`; keys and values are projected from `kv_dim`.
  MultiHeadAttention(Eigen::Index dim, Eigen::Index kv_dim, int heads, Rng& rng);
  Var<T> operator()(const Var<T>& x, const Var<T>& context, bool causal) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(Eigen::Index dim, Eigen::Index hidden, Rng& rng);
  Var<T> operator()(const Var<T>& x) const { return fc2(gelu(fc1(x))); }
  void collect(const std::string& prefix, ParamList<T>& out) const;
};

}  // namespace scob::nn
