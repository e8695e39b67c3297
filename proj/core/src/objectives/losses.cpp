#include "scob/objectives/losses.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "scob/nn/ops.hpp"
#include "scob/util/errors.hpp"

namespace scob {

using nn::Matrix;
using nn::Var;

void LossConfig::validate() const {
  if (!(tau > 0) || !std::isfinite(tau)) throw ConfigError(fmt::format("loss.tau must be positive, got {}", tau));
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError(fmt::format("loss.lambda must be >= 0, got {}", lambda));
}

namespace {

template <typename T>
void check_token_shapes(const Matrix<T>& logits, std::span<const TokenId> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw InputError(fmt::format("token loss: {} logit rows for {} targets", logits.rows(), targets.size()));
  }
  for (TokenId t : targets) {
    if (t < 0 || t >= logits.cols()) throw InputError(fmt::format("token loss: target {} outside [0, {})", t, logits.cols()));
  }
}

// Negative log-likelihood of `target` under softmax over the `v` entries at
// `row`; optionally writes softmax(row) - onehot(target) into `g`.
template <typename T>
T row_nll(const T* row, Eigen::Index v, TokenId target, T* g) {
  T m = row[0];
  for (Eigen::Index k = 1; k < v; ++k) m = std::max(m, row[k]);
  T sum = 0;
  for (Eigen::Index k = 0; k < v; ++k) sum += std::exp(row[k] - m);
  const T lse = m + std::log(sum);
  if (g) {
    for (Eigen::Index k = 0; k < v; ++k) g[k] = std::exp(row[k] - lse);
    g[target] -= T(1);
  }
  return lse - row[target];
}

}  // namespace

template <typename T>
T token_loss(const Matrix<T>& logits, std::span<const TokenId> targets, std::span<const double> weights, Matrix<T>* grad) {
  check_token_shapes(logits, targets);
  if (weights.size() != targets.size()) {
    throw InputError(fmt::format("token loss: {} weights for {} targets", weights.size(), targets.size()));
  }
  if (grad) grad->setZero(logits.rows(), logits.cols());
  T loss = 0;
  const Eigen::Index v = logits.cols();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double w = weights[static_cast<std::size_t>(i)];
    if (w == 0) continue;
    const T wt = static_cast<T>(w);
    T* g = grad ? grad->row(i).data() : nullptr;
    loss += wt * row_nll<T>(logits.row(i).data(), v, targets[static_cast<std::size_t>(i)], g);
    if (g) grad->row(i) *= wt;
  }
  return loss;
}

template <typename T>
T token_loss_unweighted(const Matrix<T>& logits, std::span<const TokenId> targets, Matrix<T>* grad) {
  check_token_shapes(logits, targets);
  if (grad) grad->setZero(logits.rows(), logits.cols());
  T loss = 0;
  const Eigen::Index v = logits.cols();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    T* g = grad ? grad->row(i).data() : nullptr;
    loss += row_nll<T>(logits.row(i).data(), v, targets[static_cast<std::size_t>(i)], g);
  }
  return loss;
}

template <typename T>
SupConResult<T> supcon_loss(const Matrix<T>& z, std::span<const int> labels, double tau, Matrix<T>* grad) {
  if (static_cast<std::size_t>(z.rows()) != labels.size()) {
    throw InputError(fmt::format("supcon: {} embeddings for {} labels", z.rows(), labels.size()));
  }
  if (!(tau > 0)) throw RangeError(fmt::format("supcon: tau must be positive, got {}", tau));
  SupConResult<T> result;
  const Eigen::Index n = z.rows();
  if (grad) grad->setZero(n, z.cols());
  if (n < 2) {
    result.degenerate = true;
    return result;
  }

  const T inv_tau = static_cast<T>(1.0 / tau);
  Matrix<T> s;
  s.noalias() = z * z.transpose();
  s *= inv_tau;

  Matrix<T> g;
  if (grad) g.setZero(n, n);
  std::vector<Eigen::Index> positives;
  for (Eigen::Index j = 0; j < n; ++j) {
    positives.clear();
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a != j && labels[static_cast<std::size_t>(a)] == labels[static_cast<std::size_t>(j)]) positives.push_back(a);
    }
    if (positives.empty()) continue;
    ++result.anchors;

    T m = -std::numeric_limits<T>::infinity();
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a != j) m = std::max(m, s(j, a));
    }
    T sum = 0;
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a != j) sum += std::exp(s(j, a) - m);
    }
    const T lse = m + std::log(sum);
    T pos_sum = 0;
    for (Eigen::Index p : positives) pos_sum += s(j, p);
    const T inv_p = T(1) / static_cast<T>(positives.size());
    result.value += lse - pos_sum * inv_p;

    if (grad) {
      for (Eigen::Index a = 0; a < n; ++a) {
        if (a != j) g(j, a) = std::exp(s(j, a) - lse);
      }
      for (Eigen::Index p : positives) g(j, p) -= inv_p;
    }
  }
  if (grad) {
    Matrix<T> sym = g + g.transpose();
    grad->noalias() = sym * z;
    *grad *= inv_tau;
  }
  return result;
}

template <typename T>
Var<T> token_loss(const Var<T>& logits, std::span<const TokenId> targets, std::span<const double> weights) {
  const bool want_grad = nn::grad_enabled() && logits.requires_grad();
  Matrix<T> g;
  Matrix<T> out(1, 1);
  out(0, 0) = token_loss<T>(logits.value(), targets, weights, want_grad ? &g : nullptr);
  return nn::make_result<T>(std::move(out), {logits}, [g = std::move(g)](nn::Node<T>& self) {
    self.inputs[0]->accumulate(g * self.grad(0, 0));
  });
}

template <typename T>
Var<T> supcon_loss(const Var<T>& z, std::span<const int> labels, double tau, SupConResult<T>* info) {
  const bool want_grad = nn::grad_enabled() && z.requires_grad();
  Matrix<T> g;
  const auto res = supcon_loss<T>(z.value(), labels, tau, want_grad ? &g : nullptr);
  if (info) *info = res;
  Matrix<T> out(1, 1);
  out(0, 0) = res.value;
  return nn::make_result<T>(std::move(out), {z}, [g = std::move(g)](nn::Node<T>& self) {
    self.inputs[0]->accumulate(g * self.grad(0, 0));
  });
}

template <typename T>
Var<T> total_loss(const std::vector<MemberOutputs<T>>& members, const LossConfig& config, bool use_supcon,
                  LossBreakdown* breakdown) {
  if (members.empty()) throw InputError("total loss needs at least one batch member");
  Var<T> token_sum;
  for (const auto& m : members) {
    Var<T> t = token_loss<T>(m.logits, m.targets, m.weights);
    token_sum = token_sum.defined() ? nn::add(token_sum, t) : t;
  }
  const Var<T> token_mean = nn::scale(token_sum, static_cast<T>(1.0 / static_cast<double>(members.size())));

  LossBreakdown info;
  info.token = static_cast<double>(token_mean.item());
  Var<T> total = token_mean;
  if (use_supcon) {
    std::vector<Var<T>> parts;
    std::vector<int> labels;
    for (const auto& m : members) {
      if (!m.z.defined() || m.z.rows() == 0) continue;
      if (static_cast<std::size_t>(m.z.rows()) != m.labels.size()) {
        throw InputError("total loss: projection rows and labels disagree");
      }
      parts.push_back(m.z);
      labels.insert(labels.end(), m.labels.begin(), m.labels.end());
    }
    SupConResult<T> sc;
    if (parts.empty()) {
      sc.degenerate = true;
    } else {
      const Var<T> pooled = parts.size() == 1 ? parts.front() : nn::concat_rows(parts);
      const Var<T> supcon = supcon_loss<T>(pooled, labels, config.tau, &sc);
      total = nn::add(total, nn::scale(supcon, static_cast<T>(config.lambda)));
    }
    info.supcon = static_cast<double>(sc.value);
    info.anchors = sc.anchors;
    info.supcon_degenerate = sc.degenerate;
    info.supcon_per_anchor = sc.anchors > 0 ? info.supcon / sc.anchors : 0.0;
  }
  info.total = static_cast<double>(total.item());
  if (breakdown) *breakdown = info;
  return total;
}

GradcheckResult gradcheck(const std::function<double(const Matrix<double>&, Matrix<double>*)>& f,
                          const Matrix<double>& x, double epsilon) {
  Matrix<double> analytic;
  f(x, &analytic);
  if (analytic.size() == 0) analytic.setZero(x.rows(), x.cols());
  Matrix<double> numeric(x.rows(), x.cols());
  Matrix<double> probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + epsilon;
    const double up = f(probe, nullptr);
    probe.data()[i] = orig - epsilon;
    const double down = f(probe, nullptr);
    probe.data()[i] = orig;
    numeric.data()[i] = (up - down) / (2 * epsilon);
  }
  GradcheckResult r;
  r.coordinates = static_cast<std::size_t>(x.size());
  r.max_abs_error = x.size() ? (analytic - numeric).cwiseAbs().maxCoeff() : 0.0;
  const double scale = x.size() ? std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff()) : 0.0;
  r.max_rel_error = scale > 0 ? r.max_abs_error / scale : 0.0;
  return r;
}

GradcheckResult gradcheck(const std::function<Var<double>()>& loss, const std::vector<Var<double>>& inputs,
                          double epsilon) {
  for (auto v : inputs) v.mutable_grad().resize(0, 0);
  backward(loss());
  GradcheckResult r;
  double abs_err = 0;
  double scale = 0;
  nn::NoGradGuard no_grad;
  for (auto v : inputs) {
    Matrix<double> analytic = v.grad();
    if (analytic.size() == 0) analytic.setZero(v.rows(), v.cols());
    Matrix<double>& x = v.mutable_value();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double orig = x.data()[i];
      x.data()[i] = orig + epsilon;
      const double up = loss().item();
      x.data()[i] = orig - epsilon;
      const double down = loss().item();
      x.data()[i] = orig;
      const double num = (up - down) / (2 * epsilon);
      abs_err = std::max(abs_err, std::abs(num - analytic.data()[i]));
      scale = std::max({scale, std::abs(num), std::abs(analytic.data()[i])});
    }
    r.coordinates += static_cast<std::size_t>(x.size());
  }
  r.max_abs_error = abs_err;
  r.max_rel_error = scale > 0 ? abs_err / scale : 0.0;
  return r;
}

#define SCOB_INSTANTIATE_LOSSES(T)                                                                                  \
  template T token_loss<T>(const Matrix<T>&, std::span<const TokenId>, std::span<const double>, Matrix<T>*);       \
  template T token_loss_unweighted<T>(const Matrix<T>&, std::span<const TokenId>, Matrix<T>*);                     \
  template SupConResult<T> supcon_loss<T>(const Matrix<T>&, std::span<const int>, double, Matrix<T>*);            \
  template Var<T> token_loss<T>(const Var<T>&, std::span<const TokenId>, std::span<const double>);                 \
  template Var<T> supcon_loss<T>(const Var<T>&, std::span<const int>, double, SupConResult<T>*);                   \
  template Var<T> total_loss<T>(const std::vector<MemberOutputs<T>>&, const LossConfig&, bool, LossBreakdown*);

SCOB_INSTANTIATE_LOSSES(float)
SCOB_INSTANTIATE_LOSSES(double)

#undef SCOB_INSTANTIATE_LOSSES

}  // namespace scob
