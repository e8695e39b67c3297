#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "scob/model/checkpoint.hpp"
#include "scob/model/model.hpp"
#include "scob/objectives/losses.hpp"
#include "scob/util/errors.hpp"
#include "scob/util/rng.hpp"
#include "support/test_support.hpp"

namespace scob {
namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.image_side = 32;
  c.patch_size = 8;
  c.encoder_dim = 16;
  c.encoder_layers = 1;
  c.encoder_heads = 2;
  c.decoder_dim = 16;
  c.decoder_layers = 1;
  c.decoder_heads = 2;
  c.mlp_ratio = 2;
  c.vocab_size = 1025;
  c.max_len = 10;
  c.projector_hidden = 12;
  c.projector_out = 8;
  return c;
}

Image random_image(int side, Rng& rng) {
  Image img(side, side);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

template <typename T>
bool all_finite(const nn::Matrix<T>& m) {
  return m.allFinite();
}

TEST(ModelConfig, ValidationAndJson) {
  ModelConfig c = small_model();
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
  c.image_side = 30;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_model();
  c.max_len = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_model();
  c.decoder_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_model();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(ModelConfig::from_json("{"), ConfigError);
  EXPECT_EQ(ModelConfig{}.projector_hidden, 128);
}

TEST(Model, ParameterCountMatchesArchitecture) {
  const ModelConfig c = small_model();
  const Model<float> m(c, 1);
  auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
  const std::size_t de = 16, dd = 16, V = 1025;
  const std::size_t enc_block = 2 * 2 * de + 4 * linear(de, de) + linear(de, 2 * de) + linear(2 * de, de);
  const std::size_t dec_block = 3 * 2 * dd + 4 * linear(dd, dd) + 2 * linear(dd, dd) + 2 * linear(de, dd) +
                                linear(dd, 2 * dd) + linear(2 * dd, dd);
  const std::size_t expected = linear(8 * 8 * 3, de) + 16 * de + enc_block + 2 * de + V * dd + 10 * dd + dec_block +
                               2 * dd + linear(dd, V) + linear(dd, 12) + linear(12, 8);
  EXPECT_EQ(m.parameter_count(), expected);
  EXPECT_NO_THROW(m.parameter("head.weight"));
  EXPECT_THROW(m.parameter("nope"), ConfigError);
}

TEST(Model, EncodeShapeFinitenessAndDeterminism) {
  const Model<float> m(small_model(), 2);
  const Image zero(32, 32);
  const auto v = m.encode(zero);
  EXPECT_EQ(v.rows(), 16);
  EXPECT_EQ(v.cols(), 16);
  EXPECT_TRUE(all_finite(v.value()));
  Rng r(3);
  const Image img = random_image(32, r);
  EXPECT_TRUE(m.encode(img).value() == m.encode(img).value());
  EXPECT_THROW(m.encode(Image(32, 16)), InputError);
}

TEST(Model, PatchAlignedTranslationShiftsTheGrid) {
  ModelConfig c = small_model();
  c.encoder_layers = 0;
  c.encoder_position_embedding = false;
  const Model<double> m(c, 4);
  Image a(32, 32), b(32, 32);
  std::fill(a.pixels.begin(), a.pixels.end(), 200);
  std::fill(b.pixels.begin(), b.pixels.end(), 200);
  // A small glyph-like blob in patch (1, 1), then one patch to the right.
  for (int y = 9; y < 15; ++y) {
    for (int x = 10; x < 13; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        a.at(x, y)[ch] = 20;
        b.at(x + 8, y)[ch] = 20;
      }
    }
  }
  const auto ea = m.encode(a).value();
  const auto eb = m.encode(b).value();
  const int g = c.grid_side();
  // Cross-correlation over horizontal shifts of the mean-removed grids.
  const Eigen::RowVectorXd mean_a = ea.colwise().mean(), mean_b = eb.colwise().mean();
  int best_shift = -99;
  double best = -1e300;
  for (int dx = -2; dx <= 2; ++dx) {
    double score = 0;
    for (int r = 0; r < g; ++r) {
      for (int col = 0; col < g; ++col) {
        const int shifted = col + dx;
        if (shifted < 0 || shifted >= g) continue;
        score += (ea.row(r * g + col) - mean_a).dot(eb.row(r * g + shifted) - mean_b);
      }
    }
    if (score > best) {
      best = score;
      best_shift = dx;
    }
  }
  EXPECT_EQ(best_shift, 1);
  EXPECT_LT((ea.row(1 * g + 1) - eb.row(1 * g + 2)).norm(), 1e-12);
}

TEST(Model, TeacherForcedShapesAndCausality) {
  const Model<double> m(small_model(), 5);
  Rng r(6);
  const Image img = random_image(32, r);
  const std::vector<TokenId> one{4};
  const auto o1 = m.forward_teacher_forced(img, one);
  EXPECT_EQ(o1.logits.rows(), 1);
  EXPECT_EQ(o1.logits.cols(), 1025);
  EXPECT_EQ(o1.hidden.cols(), 16);
  std::vector<TokenId> ids{4, 7, 9, 1011, 3, 1020, 1};
  const auto base = m.forward_teacher_forced(img, ids).logits.value();
  for (std::size_t k = 1; k < ids.size(); ++k) {
    auto perturbed = ids;
    perturbed[k] = (perturbed[k] + 5) % 1025;
    const auto out = m.forward_teacher_forced(img, perturbed).logits.value();
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_TRUE(out.row(static_cast<Eigen::Index>(i)) == base.row(static_cast<Eigen::Index>(i))) << i << " " << k;
    }
    EXPECT_FALSE(out.row(static_cast<Eigen::Index>(k)) == base.row(static_cast<Eigen::Index>(k)));
  }
  EXPECT_THROW(m.forward_teacher_forced(img, std::vector<TokenId>{4, 1025}), RangeError);
  EXPECT_THROW(m.forward_teacher_forced(img, std::vector<TokenId>{}), InputError);
  EXPECT_THROW(m.forward_teacher_forced(img, std::vector<TokenId>(11, 4)), InputError);
}

TEST(Model, GradcheckMeanLogitOverAllParameters) {
  const Model<double> m(small_model(), 7);
  Rng r(8);
  const Image img = random_image(32, r);
  const std::vector<TokenId> ids{4, 7, 9, 11};
  std::vector<nn::Var<double>> params;
  for (const auto& p : m.parameters()) params.push_back(p.var);
  const auto res = gradcheck([&] { return nn::mean_all(m.forward_teacher_forced(img, ids).logits); }, params, 1e-6);
  EXPECT_GT(res.coordinates, 1000u);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Model, ProjectorIsUnitNormAndGradchecks) {
  const Model<double> m(small_model(), 9);
  Rng r(10);
  nn::Var<double> d(testing::random_matrix<double>(5, 16, r), true);
  d.mutable_value().row(3) = d.value().row(1);
  const auto z = m.project(d).value();
  EXPECT_EQ(z.cols(), 8);
  for (Eigen::Index i = 0; i < z.rows(); ++i) EXPECT_NEAR(z.row(i).norm(), 1.0, 1e-6);
  EXPECT_TRUE(z.row(3) == z.row(1));
  std::vector<nn::Var<double>> inputs{d, m.parameter("projector.fc1.weight"), m.parameter("projector.fc2.weight")};
  const nn::Matrix<double> w = testing::random_matrix<double>(8, 1, r);
  const auto res = gradcheck(
      [&] {
        const auto zz = m.project(d);
        return nn::mean_all(nn::matmul(zz, nn::Var<double>(w)));
      },
      inputs, 1e-6);
  EXPECT_LT(res.max_rel_error, 1e-4);
}

TEST(Model, GenerateTerminatesAndIsDeterministic) {
  const Model<float> m(small_model(), 11);
  Rng r(12);
  const Image img = random_image(32, r);
  const auto a = m.generate(img, 4, 50, 1);
  EXPECT_LE(a.size(), 10u);
  EXPECT_GE(a.size(), 1u);
  EXPECT_EQ(a.front(), 4);
  EXPECT_EQ(a, m.generate(img, 4, 50, 1));
  EXPECT_LE(m.generate(img, 4, 3, 1).size(), 3u);
}

TEST(Model, GradientsFiniteOnRandomData) {
  const Model<float> m(small_model(), 13);
  Rng r(14);
  const Image img = random_image(32, r);
  const std::vector<TokenId> ids{4, 7, 9, 11, 2, 2, 2, 2, 1020};
  const auto out = m.forward_teacher_forced(img, ids);
  nn::backward(nn::add(nn::mean_all(out.logits), nn::mean_all(m.project(out.hidden))));
  for (const auto& p : m.parameters()) {
    ASSERT_EQ(p.var.grad().size(), p.var.value().size()) << p.name;
    EXPECT_TRUE(all_finite(p.var.grad())) << p.name;
  }
}

TEST(Checkpoint, SaveLoadReproducesForwardBitwise) {
  const ModelConfig c = small_model();
  const Model<float> m(c, 15);
  CheckpointFile f;
  f.header = R"({"note": "test"})";
  append_model(f, m);
  const auto dir = testing::scratch_dir("ckpt");
  f.save(dir / "m.ckpt");
  const auto back = CheckpointFile::load(dir / "m.ckpt");
  EXPECT_EQ(back.header, f.header);
  ASSERT_EQ(back.tensors.size(), m.parameters().size());
  Model<float> m2(c, 99);
  restore_model(back, m2);
  Rng r(16);
  const Image img = random_image(32, r);
  const std::vector<TokenId> ids{4, 7, 9};
  const auto a = m.forward_teacher_forced(img, ids);
  const auto b = m2.forward_teacher_forced(img, ids);
  EXPECT_TRUE(a.logits.value() == b.logits.value());
  EXPECT_TRUE(a.hidden.value() == b.hidden.value());
  EXPECT_EQ(m.generate(img, 4, 10, 1), m2.generate(img, 4, 10, 1));
}

TEST(Checkpoint, RejectsDamagedFiles) {
  const auto dir = testing::scratch_dir("ckpt-bad");
  EXPECT_THROW(CheckpointFile::load(dir / "missing.ckpt"), IoError);
  CheckpointFile f;
  f.header = "{}";
  append_model(f, Model<float>(small_model(), 1));
  f.save(dir / "ok.ckpt");
  std::ifstream in(dir / "ok.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir / name, std::ios::binary) << content;
    return dir / name;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(CheckpointFile::load(write("magic.ckpt", bad_magic)), ConfigError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(CheckpointFile::load(write("version.ckpt", bad_version)), ConfigError);
  EXPECT_THROW(CheckpointFile::load(write("trunc.ckpt", bytes.substr(0, bytes.size() - 5))), ConfigError);

  Model<float> other_shape([] {
    ModelConfig c = small_model();
    c.vocab_size = 1030;
    return c;
  }(), 1);
  EXPECT_THROW(restore_model(f, other_shape), ConfigError);
  Model<double> wrong_dtype(small_model(), 1);
  EXPECT_THROW(restore_model(f, wrong_dtype), ConfigError);
}

TEST(Checkpoint, TensorRoundTrip) {
  Rng r(17);
  const auto m = testing::random_matrix<double>(3, 5, r);
  const auto t = to_tensor("x", m);
  EXPECT_EQ(t.dtype, "f64");
  EXPECT_EQ(t.shape, (std::vector<std::int64_t>{3, 5}));
  EXPECT_TRUE(from_tensor<double>(t) == m);
  EXPECT_THROW(from_tensor<float>(t), ConfigError);
}

TEST(Patchify, LayoutAndScaling) {
  Image img(16, 16);
  img.at(9, 1)[2] = 255;  // patch (0, 1), local (y 1, x 1), channel 2
  const auto p = patchify<double>(img, 8);
  ASSERT_EQ(p.rows(), 4);
  ASSERT_EQ(p.cols(), 192);
  EXPECT_DOUBLE_EQ(p(1, (1 * 8 + 1) * 3 + 2), 1.0);
  EXPECT_DOUBLE_EQ(p(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(p.maxCoeff(), 1.0);
}

}  // namespace
}  // namespace scob
