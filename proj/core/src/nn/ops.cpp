#include "scob/nn/ops.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace scob::nn {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix<T> out;
  out.noalias() = a.value() * b.value();
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      Matrix<T> g;
      g.noalias() = self.grad * B.value.transpose();
      A.accumulate(g);
    }
    if (B.requires_grad) {
      Matrix<T> g;
      g.noalias() = A.value.transpose() * self.grad;
      B.accumulate(g);
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shapes differ");
  return make_result<T>(a.value() + b.value(), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->accumulate(self.grad);
    }
  });
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols");
  Matrix<T> out = a.value();
  out.rowwise() += row.value().row(0);
  return make_result<T>(std::move(out), {a, row}, [](Node<T>& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->accumulate(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->accumulate(self.grad.colwise().sum());
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return make_result<T>(a.value() * s, {a}, [s](Node<T>& self) { self.inputs[0]->accumulate(self.grad * s); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return make_result<T>(a.value().cwiseMax(T(0)), {a}, [](Node<T>& self) {
    const auto& x = self.inputs[0]->value;
    self.inputs[0]->accumulate((x.array() > T(0)).select(self.grad, T(0)));
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  const T c = static_cast<T>(std::sqrt(2.0 / M_PI));
  const T k = T(0.044715);
  Matrix<T> out = a.value().unaryExpr([c, k](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); });
  return make_result<T>(std::move(out), {a}, [c, k](Node<T>& self) {
    const auto& x = self.inputs[0]->value;
    Matrix<T> d = x.unaryExpr([c, k](T v) {
      const T u = c * (v + k * v * v * v);
      const T t = std::tanh(u);
      const T du = c * (T(1) + T(3) * k * v * v);
      return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
    });
    self.inputs[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  require(gamma.cols() == d && beta.cols() == d, "layer_norm: affine parameters must be 1 x cols");
  Matrix<T> xhat(n, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = x.value().row(i);
    const T mean = row.mean();
    const T var = (row.array() - mean).square().mean();
    inv_std(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = (row.array() - mean) * inv_std(i);
  }
  Matrix<T> out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                          auto& X = *self.inputs[0];
                          auto& G = *self.inputs[1];
                          auto& B = *self.inputs[2];
                          if (B.requires_grad) B.accumulate(self.grad.colwise().sum());
                          if (G.requires_grad) G.accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
                          if (X.requires_grad) {
                            Matrix<T> dxhat = self.grad;
                            dxhat.array().rowwise() *= G.value.row(0).array();
                            Matrix<T> dx(dxhat.rows(), dxhat.cols());
                            for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
                              const T m1 = dxhat.row(i).mean();
                              const T m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
                              dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
                            }
                            X.accumulate(dx);
                          }
                        });
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, bool causal) {
  const Eigen::Index nq = q.rows();
  const Eigen::Index nk = k.rows();
  const Eigen::Index d = q.cols();
  require(k.cols() == d && v.cols() == d && v.rows() == nk, "attention: q/k/v shapes disagree");
  require(heads > 0 && d % heads == 0, "attention: width not divisible by heads");
  require(!causal || nq == nk, "attention: causal mask needs equal query and key lengths");
  const Eigen::Index dh = d / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));

  std::vector<Matrix<T>> probs(static_cast<std::size_t>(heads));
  Matrix<T> out(nq, d);
  for (int h = 0; h < heads; ++h) {
    Matrix<T> s;
    s.noalias() = q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose();
    s *= scale_factor;
    for (Eigen::Index i = 0; i < nq; ++i) {
      const Eigen::Index visible = causal ? i + 1 : nk;
      auto row = s.row(i);
      const T m = row.head(visible).maxCoeff();
      row.head(visible) = (row.head(visible).array() - m).exp();
      row.head(visible) /= row.head(visible).sum();
      if (visible < nk) row.tail(nk - visible).setZero();
    }
    out.middleCols(h * dh, dh).noalias() = s * v.value().middleCols(h * dh, dh);
    probs[static_cast<std::size_t>(h)] = std::move(s);
  }

  return make_result<T>(std::move(out), {q, k, v},
                        [probs = std::move(probs), heads, dh, scale_factor](Node<T>& self) {
                          auto& Q = *self.inputs[0];
                          auto& K = *self.inputs[1];
                          auto& V = *self.inputs[2];
                          Matrix<T> dq = Matrix<T>::Zero(Q.value.rows(), Q.value.cols());
                          Matrix<T> dk = Matrix<T>::Zero(K.value.rows(), K.value.cols());
                          Matrix<T> dv = Matrix<T>::Zero(V.value.rows(), V.value.cols());
                          for (int h = 0; h < heads; ++h) {
                            const Matrix<T>& p = probs[static_cast<std::size_t>(h)];
                            const auto dout = self.grad.middleCols(h * dh, dh);
                            dv.middleCols(h * dh, dh).noalias() = p.transpose() * dout;
                            Matrix<T> dp;
                            dp.noalias() = dout * V.value.middleCols(h * dh, dh).transpose();
                            const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = dp.cwiseProduct(p).rowwise().sum();
                            Matrix<T> ds = p.cwiseProduct(dp.colwise() - rowdot);
                            ds *= scale_factor;
                            dq.middleCols(h * dh, dh).noalias() = ds * K.value.middleCols(h * dh, dh);
                            dk.middleCols(h * dh, dh).noalias() = ds.transpose() * Q.value.middleCols(h * dh, dh);
                          }
                          if (Q.requires_grad) Q.accumulate(dq);
                          if (K.requires_grad) K.accumulate(dk);
                          if (V.requires_grad) V.accumulate(dv);
                        });
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const int> ids) {
  Matrix<T> out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result<T>(std::move(out), {table}, [idx = std::move(idx)](Node<T>& self) {
    auto& table_node = *self.inputs[0];
    if (table_node.grad.size() == 0) table_node.grad.setZero(table_node.value.rows(), table_node.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      table_node.grad.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix<T> out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_result<T>(std::move(out), parts, [](Node<T>& self) {
    Eigen::Index r = 0;
    for (auto& in : self.inputs) {
      const Eigen::Index n = in->value.rows();
      if (in->requires_grad) in->accumulate(self.grad.middleRows(r, n));
      r += n;
    }
  });
}

template <typename T>
Var<T> head_rows(const Var<T>& a, Eigen::Index n) {
  require(n >= 0 && n <= a.rows(), "head_rows: count out of range");
  return make_result<T>(a.value().topRows(n), {a}, [](Node<T>& self) {
    auto& A = *self.inputs[0];
    Matrix<T> g = Matrix<T>::Zero(A.value.rows(), A.value.cols());
    g.topRows(self.grad.rows()) = self.grad;
    A.accumulate(g);
  });
}

template <typename T>
Var<T> l2_normalize_rows(const Var<T>& a, T eps) {
  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = a.value().rowwise().norm();
  norms = norms.cwiseMax(eps);
  Matrix<T> out = a.value().array().colwise() / norms.array();
  Matrix<T> z = out;
  return make_result<T>(std::move(out), {a}, [z = std::move(z), norms = std::move(norms)](Node<T>& self) {
    // d/du (u/|u|) applied to g: (g - z (z.g)) / |u|
    const Eigen::Matrix<T, Eigen::Dynamic, 1> zg = z.cwiseProduct(self.grad).rowwise().sum();
    Matrix<T> g = self.grad - z.array().colwise().operator*(zg.array()).matrix();
    g.array().colwise() /= norms.array();
    self.inputs[0]->accumulate(g);
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  Matrix<T> out(1, 1);
  const T count = static_cast<T>(a.value().size());
  out(0, 0) = a.value().sum() / count;
  return make_result<T>(std::move(out), {a}, [count](Node<T>& self) {
    auto& A = *self.inputs[0];
    A.accumulate(Matrix<T>::Constant(A.value.rows(), A.value.cols(), self.grad(0, 0) / count));
  });
}

#define SCOB_INSTANTIATE_OPS(T)                                                          \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                              \
  template Var<T> scale<T>(const Var<T>&, T);                                            \
  template Var<T> relu<T>(const Var<T>&);                                                \
  template Var<T> gelu<T>(const Var<T>&);                                                \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);         \
  template Var<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, bool);  \
  template Var<T> gather_rows<T>(const Var<T>&, std::span<const int>);                   \
  template Var<T> concat_rows<T>(const std::vector<Var<T>>&);                            \
  template Var<T> head_rows<T>(const Var<T>&, Eigen::Index);                             \
  template Var<T> l2_normalize_rows<T>(const Var<T>&, T);                                \
  template Var<T> mean_all<T>(const Var<T>&);

SCOB_INSTANTIATE_OPS(float)
SCOB_INSTANTIATE_OPS(double)

#undef SCOB_INSTANTIATE_OPS

}  // namespace scob::nn
