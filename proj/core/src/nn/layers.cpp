#include "scob/nn/layers.hpp"

namespace scob::nn {

template <typename T>
Var<T> make_param(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng, T fill) {
  Matrix<T> m(rows, cols);
  if (stddev > 0) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * rng.normal());
  } else {
    m.setConstant(fill);
  }
  return Var<T>(std::move(m), true);
}

template <typename T>
Linear<T>::Linear(Eigen::Index in, Eigen::Index out, Rng& rng, double init_std)
    : weight(make_param<T>(in, out, init_std, rng)), bias(make_param<T>(1, out, 0.0, rng)) {}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
LayerNorm<T>::LayerNorm(Eigen::Index dim)
    : gamma(Var<T>(Matrix<T>::Ones(1, dim), true)), beta(Var<T>(Matrix<T>::Zero(1, dim), true)) {}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(Eigen::Index dim, Eigen::Index kv_dim, int heads_, Rng& rng)
    : q(dim, dim, rng), k(kv_dim, dim, rng), v(kv_dim, dim, rng), o(dim, dim, rng), heads(heads_) {}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(const Var<T>& x, const Var<T>& context, bool causal) const {
  return o(attention(q(x), k(context), v(context), heads, causal));
}

template <typename T>
void MultiHeadAttention<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
  o.collect(prefix + ".o", out);
}

template <typename T>
Mlp<T>::Mlp(Eigen::Index dim, Eigen::Index hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

template <typename T>
void Mlp<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

#define SCOB_INSTANTIATE_LAYERS(T)                                                  \
  template Var<T> make_param<T>(Eigen::Index, Eigen::Index, double, Rng&, T);       \
  template struct Linear<T>;                                                        \
  template struct LayerNorm<T>;                                                     \
  template struct MultiHeadAttention<T>;                                            \
  template struct Mlp<T>;

SCOB_INSTANTIATE_LAYERS(float)
SCOB_INSTANTIATE_LAYERS(double)

#undef SCOB_INSTANTIATE_LAYERS

}  // namespace scob::nn
