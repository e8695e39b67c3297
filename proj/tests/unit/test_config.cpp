#include <gtest/gtest.h>

#include <set>

#include "scob/config/config.hpp"
#include "scob/util/atomic_file.hpp"
#include "scob/util/errors.hpp"
#include "support/test_support.hpp"

namespace scob {
namespace {

TEST(Config, KeysAreUniqueAndRoundTrip) {
  std::set<std::string> seen;
  const TrainConfig base = desk_config();
  for (const auto& k : config_keys()) {
    EXPECT_TRUE(seen.insert(k.key).second) << k.key;
    EXPECT_FALSE(k.help.empty()) << k.key;
    TrainConfig c = base;
    const std::string v = k.get(c);
    set_config_value(c, k.key, v);
    EXPECT_EQ(k.get(c), v) << k.key;
  }
  EXPECT_TRUE(seen.count("train.steps"));
  EXPECT_TRUE(seen.count("data.real.render.clutter_rects"));
  EXPECT_TRUE(seen.count("model.max_len"));
}

TEST(Config, FormattedConfigReparsesToSameSnapshot) {
  TrainConfig c = desk_config();
  c.seed = 123456789012345ULL;
  c.loss.tau = 0.1;
  c.charset = charset_from_spec("literal:AB\\sc\\\\");
  TrainConfig d;
  apply_config_text(d, format_config(c));
  EXPECT_EQ(config_snapshot(d), config_snapshot(c));
  EXPECT_EQ(d.charset, "AB c\\");
}

TEST(Config, TextFormatCommentsAndErrors) {
  TrainConfig c;
  apply_config_text(c, "# comment\n\n  train.steps = 77  \ntrain.mode=vanilla\n");
  EXPECT_EQ(c.steps, 77);
  EXPECT_EQ(c.mode, TrainMode::kVanilla);
  try {
    apply_config_text(c, "train.steps = 1\ntrain.stepz = 2\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("run.cfg:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("train.stepz"), std::string::npos) << msg;
  }
  EXPECT_THROW(apply_config_text(c, "train.steps 5\n"), ConfigError);
  EXPECT_THROW(set_config_value(c, "train.steps", "5x"), ConfigError);
  EXPECT_THROW(set_config_value(c, "train.lr_peak", "nan"), ConfigError);
  EXPECT_THROW(set_config_value(c, "model.encoder_position_embedding", "maybe"), ConfigError);
  EXPECT_THROW(set_config_value(c, "train.task", "detect"), ConfigError);
}

TEST(Config, RangesAndPaths) {
  TrainConfig c;
  set_config_value(c, "data.real.render.clutter_rects", "2,5");
  EXPECT_EQ(c.real.render.clutter_rects, (IntRange{2, 5}));
  set_config_value(c, "render.font_size", "12");
  EXPECT_EQ(c.render.font_size, (IntRange{12, 12}));
  set_config_value(c, "data.real.manifest", " /tmp/x.jsonl ");
  EXPECT_EQ(c.real.manifest, std::filesystem::path("/tmp/x.jsonl"));
}

TEST(Config, ConfigFileMissingIsConfigError) {
  TrainConfig c;
  EXPECT_THROW(apply_config_file(c, "/nonexistent/scob.cfg"), ConfigError);
  const auto dir = testing::scratch_dir("config-file");
  write_file_atomic(dir / "a.cfg", "train.batch_size = 9\n");
  apply_config_file(c, dir / "a.cfg");
  EXPECT_EQ(c.batch_size, 9);
}

TEST(Charset, Specs) {
  EXPECT_EQ(charset_from_spec("printable_ascii"), default_charset());
  EXPECT_EQ(charset_from_spec("upper_digits").size(), 37u);
  EXPECT_EQ(charset_from_spec("literal:\\u00e9x"), "\xc3\xa9x");
  EXPECT_THROW(charset_from_spec("literal:"), ConfigError);
  EXPECT_THROW(charset_from_spec("literal:a\\q"), ConfigError);
  EXPECT_THROW(charset_from_spec("literal:a\\"), ConfigError);
  EXPECT_THROW(charset_from_spec("latin"), ConfigError);
  for (const char* s : {"printable_ascii", "upper_digits", "literal:\\s\\\\\\u0009AZ"}) {
    EXPECT_EQ(charset_from_spec(charset_to_spec(charset_from_spec(s))), charset_from_spec(s)) << s;
  }
}

TEST(DeskConfig, FitsTheDeskBudget) {
  TrainConfig c = desk_config();
  c.render.font_dir = testing::font_dir();
  EXPECT_NO_THROW(c.validate());
  EXPECT_LE(Vocab(c.charset).num_chars(), 40);
  EXPECT_EQ(c.model.image_side, 128);
  const Model<float> m(resolved_model_config(c, make_vocab(c)), 0);
  EXPECT_LE(m.parameter_count(), 2'000'000u);
  EXPECT_EQ(c.synthetic.ratio + c.real.ratio, 1.0);
  EXPECT_GT(c.real.render.clutter_rects.hi, 0);
  EXPECT_EQ(c.synthetic.render.clutter_rects.hi, 0);
}

}  // namespace
}  // namespace scob
