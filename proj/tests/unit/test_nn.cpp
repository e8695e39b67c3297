#include <gtest/gtest.h>

#include <cmath>

#include "scob/nn/layers.hpp"
#include "scob/nn/ops.hpp"
#include "scob/objectives/losses.hpp"
#include "support/test_support.hpp"

namespace scob {
namespace {

using nn::Matrix;
using nn::Var;
using testing::random_matrix;

Var<double> leaf(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  return Var<double>(random_matrix<double>(r, c, rng, scale), true);
}

// Reduces a matrix to a scalar with fixed random weights so every output
// entry gets a distinct upstream gradient.
Var<double> probe_sum(const Var<double>& x, std::uint64_t seed) {
  Rng rng(seed);
  Var<double> w(random_matrix<double>(x.cols(), 1, rng));
  Var<double> col = nn::matmul(x, w);
  Var<double> ones(Matrix<double>::Ones(1, x.rows()));
  return nn::matmul(ones, col);
}

constexpr double kTol = 1e-7;

TEST(Autograd, MatmulAddScaleGradients) {
  Rng rng(1);
  auto a = leaf(3, 4, rng), b = leaf(4, 5, rng), c = leaf(3, 5, rng);
  auto f = [&] { return probe_sum(nn::scale(nn::add(nn::matmul(a, b), c), 0.7), 11); };
  EXPECT_LT(gradcheck(f, {a, b, c}).max_rel_error, kTol);
}

TEST(Autograd, AddRowBroadcastGradient) {
  Rng rng(2);
  auto a = leaf(4, 3, rng), r = leaf(1, 3, rng);
  auto f = [&] { return probe_sum(nn::add_row(a, r), 12); };
  EXPECT_LT(gradcheck(f, {a, r}).max_rel_error, kTol);
}

TEST(Autograd, ActivationGradients) {
  Rng rng(3);
  auto a = leaf(5, 4, rng);
  EXPECT_LT(gradcheck([&] { return probe_sum(nn::gelu(a), 13); }, {a}).max_rel_error, kTol);
  EXPECT_LT(gradcheck([&] { return probe_sum(nn::relu(a), 14); }, {a}).max_rel_error, kTol);
}

TEST(Autograd, GeluMatchesTanhFormula) {
  Var<double> x(Matrix<double>{{-2.0, -0.5, 0.0, 0.3, 1.7}});
  auto y = nn::gelu(x);
  for (int i = 0; i < 5; ++i) {
    const double v = x.value()(0, i);
    const double ref = 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v)));
    EXPECT_NEAR(y.value()(0, i), ref, 1e-15);
  }
}

TEST(Autograd, LayerNormForwardAndGradient) {
  Rng rng(4);
  auto x = leaf(3, 6, rng), g = leaf(1, 6, rng), b = leaf(1, 6, rng);
  auto y = nn::layer_norm(x, g, b);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double mean = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mean).square().mean();
    for (Eigen::Index j = 0; j < 6; ++j) {
      const double ref = (x.value()(i, j) - mean) / std::sqrt(var + 1e-5) * g.value()(0, j) + b.value()(0, j);
      EXPECT_NEAR(y.value()(i, j), ref, 1e-12);
    }
  }
  auto f = [&] { return probe_sum(nn::layer_norm(x, g, b), 15); };
  EXPECT_LT(gradcheck(f, {x, g, b}).max_rel_error, 1e-6);
}

// Per-head attention written with explicit loops.
Matrix<double> naive_attention(const Matrix<double>& q, const Matrix<double>& k, const Matrix<double>& v, int heads,
                               bool causal) {
  const Eigen::Index dh = q.cols() / heads;
  Matrix<double> out = Matrix<double>::Zero(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      std::vector<double> w;
      double z = 0;
      for (Eigen::Index j = 0; j < k.rows(); ++j) {
        if (causal && j > i) {
          w.push_back(0);
          continue;
        }
        double s = 0;
        for (Eigen::Index c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
        w.push_back(std::exp(s / std::sqrt(double(dh))));
        z += w.back();
      }
      for (Eigen::Index j = 0; j < k.rows(); ++j) {
        for (Eigen::Index c = 0; c < dh; ++c) out(i, h * dh + c) += w[j] / z * v(j, h * dh + c);
      }
    }
  }
  return out;
}

TEST(Autograd, AttentionMatchesNaiveLoops) {
  Rng rng(5);
  auto q = leaf(4, 6, rng), k = leaf(4, 6, rng), v = leaf(4, 6, rng);
  for (bool causal : {false, true}) {
    auto y = nn::attention(q, k, v, 2, causal);
    EXPECT_LT((y.value() - naive_attention(q.value(), k.value(), v.value(), 2, causal)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Autograd, AttentionGradients) {
  Rng rng(6);
  auto q = leaf(4, 6, rng), k = leaf(4, 6, rng), v = leaf(4, 6, rng);
  EXPECT_LT(gradcheck([&] { return probe_sum(nn::attention(q, k, v, 3, true), 16); }, {q, k, v}).max_rel_error, 1e-6);
  auto kc = leaf(7, 6, rng), vc = leaf(7, 6, rng);
  EXPECT_LT(gradcheck([&] { return probe_sum(nn::attention(q, kc, vc, 2, false), 17); }, {q, kc, vc}).max_rel_error,
            1e-6);
}

TEST(Autograd, CausalAttentionIgnoresFutureKeys) {
  Rng rng(7);
  Matrix<double> q = random_matrix<double>(5, 4, rng), k = random_matrix<double>(5, 4, rng),
                 v = random_matrix<double>(5, 4, rng);
  auto base = nn::attention(Var<double>(q), Var<double>(k), Var<double>(v), 2, true).value();
  k.row(3).setConstant(9.0);
  v.row(3).setConstant(-4.0);
  auto changed = nn::attention(Var<double>(q), Var<double>(k), Var<double>(v), 2, true).value();
  EXPECT_EQ(base.topRows(3), changed.topRows(3));
  EXPECT_NE(base.row(3), changed.row(3));
}

TEST(Autograd, GatherConcatHeadGradients) {
  Rng rng(8);
  auto table = leaf(6, 3, rng), other = leaf(2, 3, rng);
  std::vector<int> ids{4, 1, 4, 0};
  auto f = [&] {
    auto g = nn::gather_rows(table, std::span<const int>(ids));
    return probe_sum(nn::head_rows(nn::concat_rows<double>({g, other}), 5), 18);
  };
  EXPECT_LT(gradcheck(f, {table, other}).max_rel_error, kTol);
}

TEST(Autograd, L2NormalizeRowsGradientAndNorm) {
  Rng rng(9);
  auto a = leaf(4, 5, rng);
  auto z = nn::l2_normalize_rows(a);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(z.value().row(i).norm(), 1.0, 1e-12);
  EXPECT_LT(gradcheck([&] { return probe_sum(nn::l2_normalize_rows(a), 19); }, {a}).max_rel_error, kTol);
}

TEST(Autograd, MeanAllGradient) {
  Rng rng(10);
  auto a = leaf(3, 3, rng);
  EXPECT_LT(gradcheck([&] { return nn::mean_all(nn::gelu(a)); }, {a}).max_rel_error, kTol);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  Var<double> x(Matrix<double>::Constant(1, 1, 3.0), true);
  auto y = nn::matmul(x, x);  // x^2
  auto z = nn::add(y, x);     // x^2 + x
  nn::backward(z);
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 7.0);
}

TEST(Autograd, NoGradGuardDropsGraph) {
  Var<double> x(Matrix<double>::Ones(2, 2), true);
  {
    nn::NoGradGuard guard;
    EXPECT_FALSE(nn::grad_enabled());
    auto y = nn::add(x, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->inputs.empty());
  }
  EXPECT_TRUE(nn::grad_enabled());
  EXPECT_TRUE(nn::add(x, x).requires_grad());
}

TEST(Autograd, BackwardRejectsNonScalarRoot) {
  Var<double> x(Matrix<double>::Ones(2, 2), true);
  EXPECT_THROW(nn::backward(nn::add(x, x)), std::invalid_argument);
}

TEST(Autograd, ShapeErrorsAreReported) {
  Var<double> a(Matrix<double>::Ones(2, 3)), b(Matrix<double>::Ones(2, 3));
  EXPECT_THROW(nn::matmul(a, b), std::invalid_argument);
  EXPECT_THROW(nn::attention(a, a, a, 2, false), std::invalid_argument);
  std::vector<int> bad{5};
  EXPECT_THROW(nn::gather_rows(a, std::span<const int>(bad)), std::invalid_argument);
}

TEST(Layers, MlpAndAttentionModuleGradients) {
  Rng rng(11);
  nn::Mlp<double> mlp(4, 8, rng);
  nn::MultiHeadAttention<double> mha(4, 6, 2, rng);
  auto x = leaf(3, 4, rng), ctx = leaf(5, 6, rng);
  nn::ParamList<double> params;
  mlp.collect("mlp", params);
  mha.collect("mha", params);
  std::vector<Var<double>> inputs{x, ctx};
  for (auto& p : params) inputs.push_back(p.var);
  auto f = [&] { return probe_sum(mlp(mha(x, ctx, false)), 20); };
  EXPECT_LT(gradcheck(f, inputs).max_rel_error, 1e-6);
  EXPECT_EQ(params.size(), 12u);
  EXPECT_EQ(params.front().name, "mlp.fc1.weight");
}

}  // namespace
}  // namespace scob
