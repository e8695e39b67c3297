#include <gtest/gtest.h>

#include <fmt/format.h>

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cli/cli.hpp"
#include "scob/config/config.hpp"
#include "scob/render/sample_io.hpp"
#include "scob/util/atomic_file.hpp"
#include "support/test_support.hpp"

namespace scob {
namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Desk preset shrunk to keep CLI tests fast.
std::vector<std::string> small(std::vector<std::string> args) {
  for (std::string a : std::vector<std::string>{"--preset", "desk", "--render.font_dir", testing::font_dir().string(), "--model.image_side",
                        "64", "--model.encoder_layers", "1", "--model.decoder_layers", "1", "--model.encoder_dim", "32",
                        "--model.decoder_dim", "32", "--model.projector_out", "16", "--model.projector_hidden", "32",
                        "--model.max_len", "24", "--data.synthetic.word_count", "1,2", "--data.real.word_count", "1,2",
                        "--data.synthetic.word_length", "2,3", "--data.real.word_length", "2,3"}) {
    args.push_back(a);
  }
  return args;
}

nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(std::ifstream(p)); }

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) n += !l.empty();
  return n;
}

TEST(Cli, HelpListsEveryConfigKey) {
  for (const char* cmd : {"render", "pretrain", "eval", "bench-render", "dump-embeddings"}) {
    const auto r = run({cmd, "--help"});
    EXPECT_EQ(r.code, 0) << cmd;
    for (const auto& k : config_keys()) EXPECT_NE(r.out.find("--" + k.key), std::string::npos) << cmd << " " << k.key;
  }
}

TEST(Cli, UnknownKeysAndBadValuesExitTwo) {
  const auto dir = testing::scratch_dir("cli-unknown");
  EXPECT_EQ(run(small({"pretrain", "--out", dir.string(), "--train.stepz", "1"})).code, 2);
  EXPECT_EQ(run(small({"pretrain", "--out", dir.string(), "--train.steps", "x"})).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  write_file_atomic(dir / "bad.cfg", "train.stepz = 3\n");
  const auto r = run(small({"pretrain", "--out", dir.string(), "--config", (dir / "bad.cfg").string()}));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.cfg:1"), std::string::npos) << r.err;
}

TEST(Cli, RenderCountZeroAndRepeatable) {
  const auto root = testing::scratch_dir("cli-render");
  auto r = run(small({"render", "--count", "0", "--out", (root / "empty").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(root / "empty" / "manifest.jsonl"), 0u);
  EXPECT_TRUE(std::filesystem::exists(root / "empty" / "run_manifest.json"));

  for (const char* name : {"a", "b"}) {
    r = run(small({"render", "--count", "5", "--seed", "9", "--out", (root / name).string()}));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(count_lines(root / "a" / "manifest.jsonl"), 5u);
  EXPECT_EQ(read_file(root / "a" / "manifest.jsonl"), read_file(root / "b" / "manifest.jsonl"));
  for (int i = 0; i < 5; ++i) {
    const std::string png = fmt::format("images/{:06d}.png", i);
    EXPECT_EQ(read_file(root / "a" / png), read_file(root / "b" / png)) << png;
  }
  r = run(small({"render", "--count", "5", "--seed", "10", "--out", (root / "c").string()}));
  EXPECT_NE(read_file(root / "a" / "manifest.jsonl"), read_file(root / "c" / "manifest.jsonl"));
}

TEST(Cli, RenderBadFontDirNamesPath) {
  const auto dir = testing::scratch_dir("cli-badfont");
  const auto r = run({"render", "--preset", "desk", "--render.font_dir", "/no/such/fonts", "--count", "1", "--out",
                      dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/no/such/fonts"), std::string::npos) << r.err;
  EXPECT_EQ(read_json(dir / "run_manifest.json")["status"], 2);
}

TEST(Cli, PretrainVanillaOneStep) {
  const auto dir = testing::scratch_dir("cli-vanilla");
  const auto r = run(small({"pretrain", "--mode", "vanilla", "--steps", "1", "--out", dir.string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(dir / "metrics.jsonl"), 1u);
  const auto m = read_json(dir / "run_manifest.json");
  EXPECT_EQ(m["command"], "pretrain");
  EXPECT_EQ(m["status"], 0);
  EXPECT_EQ(m["config"]["train.mode"], "vanilla");
  EXPECT_EQ(m["config_sources"]["train.mode"], "cli");
  EXPECT_EQ(m["config_sources"]["train.lr_peak"], "default");
  EXPECT_EQ(m["vocab_hash"], git_blob_hash(read_file(dir / "vocab.txt")));
  EXPECT_TRUE(m.contains("started_at"));
  EXPECT_TRUE(m.contains("finished_at"));
}

TEST(Cli, ConfigPrecedence) {
  const auto dir = testing::scratch_dir("cli-precedence");
  write_file_atomic(dir / "run.cfg", "train.steps = 2\ntrain.lr_peak = 0.002\n");
  const auto r = run(small({"pretrain", "--config", (dir / "run.cfg").string(), "--train.lr_peak", "0.003", "--out",
                            (dir / "run").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_json(dir / "run" / "run_manifest.json");
  EXPECT_EQ(m["config"]["train.steps"], "2");
  EXPECT_EQ(m["config_sources"]["train.steps"], "file");
  EXPECT_EQ(m["config"]["train.lr_peak"], "0.003");
  EXPECT_EQ(m["config_sources"]["train.lr_peak"], "cli");
  EXPECT_EQ(count_lines(dir / "run" / "metrics.jsonl"), 2u);
}

TEST(Cli, BoxlessRealData) {
  const auto root = testing::scratch_dir("cli-boxless");
  ASSERT_EQ(run(small({"render", "--domain", "real", "--data.real.boxes", "false", "--count", "4", "--out",
                       (root / "real").string()}))
                .code,
            0);
  const std::string manifest = (root / "real" / "manifest.jsonl").string();
  auto r = run(small({"pretrain", "--mode", "scob", "--steps", "1", "--data.real.manifest", manifest, "--out",
                      (root / "scob").string()}));
  EXPECT_EQ(r.code, 0) << r.err;
  r = run(small({"pretrain", "--mode", "scob_full_annotation", "--steps", "1", "--data.real.manifest", manifest,
                 "--out", (root / "full").string()}));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("box"), std::string::npos) << r.err;
}

TEST(Cli, NumericAbortExitsThree) {
  const auto dir = testing::scratch_dir("cli-abort");
  const auto r = run(small({"pretrain", "--steps", "2", "--train.lr_peak", "1e30", "--train.grad_clip", "0",
                            "--train.warmup_fraction", "0", "--out", dir.string()}));
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "abort.json"));
  EXPECT_EQ(read_json(dir / "run_manifest.json")["status"], 3);
}

struct CliEval : ::testing::Test {
  static inline std::filesystem::path root;
  static void SetUpTestSuite() {
    root = testing::scratch_dir("cli-eval");
    ASSERT_EQ(run(small({"render", "--count", "3", "--out", (root / "data").string()})).code, 0);
    ASSERT_EQ(run(small({"pretrain", "--steps", "1", "--out", (root / "run").string()})).code, 0);
  }
  static std::string ckpt() { return (root / "run" / "checkpoints" / "step-0000001.ckpt").string(); }
  static std::string manifest() { return (root / "data" / "manifest.jsonl").string(); }
};

TEST_F(CliEval, ReportIsWritten) {
  const auto r = run({"eval", "--checkpoint", ckpt(), "--manifest", manifest(), "--vocab",
                      (root / "run" / "vocab.txt").string(), "--out", (root / "eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = read_json(root / "eval" / "report.json");
  EXPECT_EQ(j["count"], 3);
  for (double v : {j["ned_mean"].get<double>(), j["e2e"]["precision"].get<double>(), j["e2e"]["f1"].get<double>()}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(j["config"]["checkpoint_step"], 1);
}

TEST_F(CliEval, EmptyManifestGivesZeroCount) {
  write_file_atomic(root / "empty.jsonl", "");
  const auto r =
      run({"eval", "--checkpoint", ckpt(), "--manifest", (root / "empty.jsonl").string(), "--out", (root / "e0").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(root / "e0" / "report.json")["count"], 0);
}

TEST_F(CliEval, MismatchedVocabularyExitsTwo) {
  Vocab("XYZ").save(root / "other_vocab.txt");
  const auto r = run({"eval", "--checkpoint", ckpt(), "--manifest", manifest(), "--vocab",
                      (root / "other_vocab.txt").string(), "--out", (root / "e1").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("hash"), std::string::npos);
}

TEST_F(CliEval, CorruptCheckpointExitsTwo) {
  std::string bytes = read_file(ckpt());
  bytes[8] = 99;  // format version
  write_file_atomic(root / "bad.ckpt", bytes);
  EXPECT_EQ(run({"eval", "--checkpoint", (root / "bad.ckpt").string(), "--manifest", manifest(), "--out",
                 (root / "e2").string()})
                .code,
            2);
}

TEST_F(CliEval, DumpRowsMatchCharacterPositions) {
  const auto r = run({"dump-embeddings", "--checkpoint", ckpt(), "--manifest", manifest(), "--out",
                      (root / "dump").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t chars = 0;
  for (const auto& e : read_manifest(manifest())) {
    for (const auto& w : e.words) chars += w.text.size();
  }
  EXPECT_EQ(count_lines(root / "dump" / "embeddings.tsv"), chars + 1);
  ASSERT_EQ(run({"dump-embeddings", "--checkpoint", ckpt(), "--manifest", manifest(), "--out",
                 (root / "dump2").string()})
                .code,
            0);
  EXPECT_EQ(read_file(root / "dump" / "embeddings.tsv"), read_file(root / "dump2" / "embeddings.tsv"));
}

TEST(Cli, BenchRender) {
  auto r = run(small({"bench-render", "-n", "1"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["samples"], 1);
  EXPECT_GT(j["render_samples_per_sec"].get<double>(), 0);
  r = run(small({"bench-render", "-n", "2", "--compare", "/no/such/dir"}));
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, ThreadsCappedByEnvironment) {
  const auto dir = testing::scratch_dir("cli-threads");
  ::setenv("SCOB_THREADS", "1", 1);
  const auto r = run(small({"pretrain", "--steps", "1", "--threads", "4", "--out", dir.string()}));
  ::unsetenv("SCOB_THREADS");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(dir / "run_manifest.json")["config"]["train.threads"], "1");
}

}  // namespace
}  // namespace scob
