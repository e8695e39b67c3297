#include "cli/cli.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>

#include "scob/config/config.hpp"
#include "scob/eval/eval.hpp"
#include "scob/model/checkpoint.hpp"
#include "scob/render/sample_io.hpp"
#include "scob/trainer/trainer.hpp"
#include "scob/util/atomic_file.hpp"
#include "scob/util/errors.hpp"
#include "scob/util/utf8.hpp"

namespace scob::cli {
namespace {

using json = nlohmann::ordered_json;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  return fmt::format("{:%Y-%m-%dT%H:%M:%S}.{:03d}Z", fmt::gmtime(std::chrono::system_clock::to_time_t(now)), ms);
}

// Short spellings for the most used keys.
const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> a{
      {"train.steps", "--steps"}, {"train.mode", "--mode"}, {"train.task", "--task"},
      {"train.batch_size", "--batch-size"}, {"train.threads", "--threads"}};
  return a;
}

// Options shared by every subcommand.
struct Common {
  std::string config_file;
  std::string preset = "default";
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> key_values;
  std::vector<CLI::Option*> key_options;

  void attach(CLI::App& app, bool out_required) {
    app.add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--preset", preset, "built-in defaults the file and flags apply to")
        ->check(CLI::IsMember({"default", "desk"}));
    auto* o = app.add_option("--out", out, "output directory");
    if (out_required) o->required();
    app.add_option("--seed", seed, "seed (same as --train.seed)");
    const auto& keys = config_keys();
    key_values.resize(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
      std::string names = "--" + keys[i].key;
      if (const auto it = aliases().find(keys[i].key); it != aliases().end()) names += "," + it->second;
      key_options.push_back(app.add_option(names, key_values[i], keys[i].help)->group("Configuration keys"));
    }
  }
};

// Everything that ends up in the run manifest.
struct RunRecord {
  std::string command;
  std::vector<std::string> args;
  std::string started = utc_now();
  std::filesystem::path dir;
  json config = json::object();
  json sources = json::object();
  std::string config_file;
  std::string preset;
  json seeds = json::object();
  std::string vocab_hash;
  json outputs = json::object();

  void write(int status, const std::string& error) const {
    if (dir.empty()) return;
    json j;
    j["command"] = command;
    j["args"] = args;
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    j["started_at"] = started;
    j["finished_at"] = utc_now();
    j["preset"] = preset;
    j["config_file"] = config_file;
    j["config"] = config;
    j["config_sources"] = sources;
    j["seeds"] = seeds;
    j["vocab_hash"] = vocab_hash;
    j["outputs"] = outputs;
    write_file_atomic(dir / "run_manifest.json", j.dump(2) + "\n");
  }
};

TrainConfig resolve_config(const Common& common, RunRecord& record) {
  TrainConfig c = common.preset == "desk" ? desk_config() : TrainConfig{};
  record.preset = common.preset;
  const auto defaults = config_snapshot(c);
  if (!common.config_file.empty()) {
    apply_config_file(c, common.config_file);
    record.config_file = std::filesystem::absolute(common.config_file).string();
  }
  const auto after_file = config_snapshot(c);
  const auto& keys = config_keys();
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (common.key_options[i]->count() > 0) set_config_value(c, keys[i].key, common.key_values[i]);
  }
  if (common.seed) c.seed = *common.seed;
  if (const char* env = std::getenv("SCOB_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap < 1) throw std::invalid_argument("cap");
      c.threads = std::min(c.threads, cap);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("SCOB_THREADS must be a positive integer, got '{}'", env));
    }
  }
  const auto final = config_snapshot(c);
  for (std::size_t i = 0; i < final.size(); ++i) {
    record.config[final[i].first] = final[i].second;
    const bool from_cli = common.key_options[i]->count() > 0 || (final[i].first == "train.seed" && common.seed) ||
                          (final[i].first == "train.threads" && std::getenv("SCOB_THREADS"));
    record.sources[final[i].first] = from_cli                             ? "cli"
                                     : after_file[i].second != defaults[i].second ? "file"
                                                                                  : "default";
  }
  record.seeds["train.seed"] = std::to_string(c.seed);
  return c;
}

RenderConfig source_render(const TrainConfig& c, Domain d) {
  RenderConfig r = d == Domain::kReal ? c.real.render : c.synthetic.render;
  r.charset = c.charset;
  if (r.font_dir.empty()) r.font_dir = c.render.font_dir;
  return r;
}

void write_vocab(const Vocab& vocab, const std::filesystem::path& dir, RunRecord& record) {
  vocab.save(dir / "vocab.txt");
  record.vocab_hash = vocab.content_hash();
}

int cmd_render(const TrainConfig& c, std::size_t count, Domain domain, RunRecord& record, std::ostream& out) {
  const Vocab vocab = make_vocab(c);
  const SourceConfig& src = domain == Domain::kReal ? c.real : c.synthetic;
  const RenderConfig rc = source_render(c, domain);
  rc.validate();
  const Renderer renderer(rc);
  std::filesystem::create_directories(record.dir / "images");
  write_vocab(vocab, record.dir, record);
  std::u32string word_chars;
  for (char32_t ch : vocab.charset()) {
    if (ch != U' ') word_chars.push_back(ch);
  }
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::child(c.seed, i);
    const auto words = random_words(word_chars, src.word_count, src.word_length, rng);
    RenderedSample s = renderer.render(words, rng.next_u64());
    s.domain = domain;
    if (!src.boxes) {
      for (auto& w : s.words) {
        w.bbox.reset();
        w.char_boxes.clear();
      }
    }
    const std::string name = fmt::format("images/{:06d}.png", i);
    write_png(s.image, record.dir / name);
    entries.push_back(make_entry(s, std::filesystem::path(name)));
  }
  write_manifest(record.dir / "manifest.jsonl", entries);
  record.outputs["manifest"] = (record.dir / "manifest.jsonl").string();
  record.outputs["samples"] = count;
  record.seeds["sample_rule"] = "sample i uses Rng::child(train.seed, i)";
  out << fmt::format("wrote {} samples to {}\n", count, record.dir.string());
  return kExitOk;
}

int cmd_pretrain(const TrainConfig& c, const std::string& resume, RunRecord& record, std::ostream& out) {
  PretrainOptions options;
  if (!resume.empty()) {
    if (!std::filesystem::exists(resume)) throw ConfigError("checkpoint does not exist: " + resume);
    options.resume = resume;
    record.outputs["resumed_from"] = resume;
  }
  record.vocab_hash = make_vocab(c).content_hash();
  record.seeds["batch_rule"] = "step k uses Rng::child(train.seed, k)";
  const PretrainResult r = pretrain(c, record.dir, options);
  record.outputs["checkpoint"] = r.final_checkpoint.string();
  record.outputs["metrics"] = r.metrics_log.string();
  record.outputs["steps"] = {r.start_step, r.end_step};
  if (!r.metrics.empty()) {
    const auto& m = r.metrics.back();
    out << fmt::format("step {} total {:.6g} token {:.6g} supcon {:.6g}\n", m.step, m.total, m.token, m.supcon);
  }
  out << fmt::format("checkpoint {}\n", r.final_checkpoint.string());
  return kExitOk;
}

struct LoadedModel {
  CheckpointInfo info;
  Vocab vocab;
  Model<float> model;
};

LoadedModel load_model(const std::string& checkpoint, const std::string& vocab_file, RunRecord& record) {
  const CheckpointFile f = CheckpointFile::load(checkpoint);
  const CheckpointInfo info = read_checkpoint_info(f);
  Vocab vocab = Vocab::parse(info.vocab_text);
  if (vocab.content_hash() != info.vocab_hash) {
    throw ConfigError(fmt::format("{}: vocabulary hash {} does not match its recorded hash {}", checkpoint,
                                  vocab.content_hash(), info.vocab_hash));
  }
  if (!vocab_file.empty()) {
    const Vocab other = Vocab::load(vocab_file);
    if (other.content_hash() != info.vocab_hash) {
      throw ConfigError(fmt::format("vocabulary {} (hash {}) does not match checkpoint vocabulary hash {}", vocab_file,
                                    other.content_hash(), info.vocab_hash));
    }
  }
  Model<float> model(info.model, 0);
  restore_model(f, model);
  record.vocab_hash = info.vocab_hash;
  record.outputs["checkpoint"] = checkpoint;
  record.outputs["checkpoint_step"] = info.step;
  return {info, std::move(vocab), std::move(model)};
}

// Manifest samples at the model's input size. Entries without an image are
// rendered with the configuration of their domain.
std::vector<RenderedSample> load_dataset(const std::string& manifest, const TrainConfig& c, const Vocab& vocab,
                                         int side, std::vector<std::string>* ids) {
  if (!std::filesystem::exists(manifest)) throw ConfigError("manifest does not exist: " + manifest);
  const auto entries = read_manifest(manifest);
  TrainConfig cc = c;
  cc.charset = vocab.charset_utf8();
  std::map<Domain, std::unique_ptr<Renderer>> renderers;
  std::vector<RenderedSample> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    RenderedSample s;
    if (e.image) {
      s = load_sample(e);
    } else {
      auto& r = renderers[e.domain];
      if (!r) r = std::make_unique<Renderer>(source_render(cc, e.domain));
      std::vector<std::string> texts;
      for (const auto& w : e.words) texts.push_back(w.text);
      s = r->render(texts, e.seed.value_or(Rng::child(c.seed, i).next_u64()));
      s.domain = e.domain;
    }
    for (const auto& w : s.words) {
      for (char32_t ch : utf8::decode(w.text)) {
        if (!vocab.find_char(ch)) {
          throw InputError(fmt::format("{} line {}: character {} is not in the checkpoint vocabulary", manifest, i + 1,
                                       utf8::describe(ch)));
        }
      }
    }
    out.push_back(fit_to_side(s, side));
    if (ids) ids->push_back(std::to_string(i));
  }
  return out;
}

int cmd_eval(const TrainConfig& c, const std::string& checkpoint, const std::string& manifest,
             const std::string& vocab_file, double iou, RunRecord& record, std::ostream& out) {
  const LoadedModel m = load_model(checkpoint, vocab_file, record);
  const auto samples = load_dataset(manifest, c, m.vocab, m.info.model.image_side, nullptr);
  EvalOptions options;
  options.task = m.info.task;
  options.iou_threshold = iou;
  EvalReport report = evaluate(m.model, m.vocab, samples, options);
  json echo;
  echo["checkpoint"] = checkpoint;
  echo["checkpoint_step"] = m.info.step;
  echo["manifest"] = manifest;
  echo["task"] = to_string(m.info.task);
  echo["mode"] = to_string(m.info.mode);
  echo["iou_threshold"] = iou;
  echo["model"] = json::parse(m.info.model.to_json());
  report.config_json = echo.dump();
  write_file_atomic(record.dir / "report.json", report.to_json());
  record.outputs["report"] = (record.dir / "report.json").string();
  out << fmt::format("samples {} ned {:.4f} f1 {:.4f} silhouette {}\n", report.count, report.ned_mean, report.e2e.f1,
                     report.silhouette.defined ? fmt::format("{:.4f}", report.silhouette.macro) : "undefined");
  return kExitOk;
}

int cmd_dump(const TrainConfig& c, const std::string& checkpoint, const std::string& manifest,
             const std::string& vocab_file, RunRecord& record, std::ostream& out) {
  const LoadedModel m = load_model(checkpoint, vocab_file, record);
  std::vector<std::string> ids;
  const auto samples = load_dataset(manifest, c, m.vocab, m.info.model.image_side, &ids);
  const EmbeddingSet set = extract_embeddings(m.model, m.vocab, samples, m.info.task);
  write_embeddings_tsv(set, m.vocab, record.dir / "embeddings.tsv", ids);
  record.outputs["embeddings"] = (record.dir / "embeddings.tsv").string();
  record.outputs["rows"] = set.size();
  out << fmt::format("wrote {} rows to {}\n", set.size(), (record.dir / "embeddings.tsv").string());
  return kExitOk;
}

int cmd_bench(const TrainConfig& c, std::size_t n, const std::string& compare, Domain domain, RunRecord& record,
              std::ostream& out) {
  const RenderConfig rc = source_render(c, domain);
  std::optional<std::filesystem::path> dir;
  if (!compare.empty()) dir = compare;
  const RenderStats s = bench_render(rc, n, dir, c.seed, c.threads);
  json j;
  j["samples"] = s.samples;
  j["render_samples_per_sec"] = s.samples_per_sec;
  j["render_bytes_per_sec"] = s.bytes_per_sec;
  j["load_samples"] = s.load_samples;
  j["load_samples_per_sec"] = s.load_samples_per_sec ? json(*s.load_samples_per_sec) : json(nullptr);
  j["load_bytes_per_sec"] = s.load_bytes_per_sec ? json(*s.load_bytes_per_sec) : json(nullptr);
  j["content_hash"] = fmt::format("{:016x}", s.content_hash);
  j["threads"] = c.threads;
  out << j.dump() << '\n';
  if (!record.dir.empty()) {
    write_file_atomic(record.dir / "bench.json", j.dump(2) + "\n");
    record.outputs["bench"] = (record.dir / "bench.json").string();
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Text-image pre-training with rendered views and character contrastive loss", "scob"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common render_c, pretrain_c, eval_c, bench_c, dump_c;
  std::size_t count = 0;
  std::string domain_name = "synthetic";
  auto* render = app.add_subcommand("render", "Render a sample corpus (PNG + JSON Lines manifest)");
  render_c.attach(*render, true);
  render->add_option("--count", count, "number of samples")->required();
  render->add_option("--domain", domain_name, "source whose settings to use")
      ->check(CLI::IsMember({"synthetic", "real"}));

  std::string resume;
  auto* pre = app.add_subcommand("pretrain", "Pre-train a model into a run directory");
  pretrain_c.attach(*pre, true);
  pre->add_option("--resume", resume, "checkpoint to continue from");

  std::string checkpoint, manifest, vocab_file;
  double iou = 0.5;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval_c.attach(*ev, true);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--manifest", manifest, "JSON Lines manifest")->required();
  ev->add_option("--vocab", vocab_file, "vocabulary file that must match the checkpoint");
  ev->add_option("--iou", iou, "IoU threshold for end-to-end matching")->check(CLI::Range(0.0, 1.0));

  std::size_t bench_n = 100;
  std::string compare;
  std::string bench_domain = "synthetic";
  auto* bench = app.add_subcommand("bench-render", "Measure rendering against loading images from disk");
  bench_c.attach(*bench, false);
  bench->add_option("-n,--count", bench_n, "samples to render");
  bench->add_option("--compare", compare, "directory of images to decode for comparison");
  bench->add_option("--domain", bench_domain, "source whose settings to use")
      ->check(CLI::IsMember({"synthetic", "real"}));

  std::string dump_checkpoint, dump_manifest, dump_vocab;
  auto* dump = app.add_subcommand("dump-embeddings", "Write projected character embeddings as TSV");
  dump_c.attach(*dump, true);
  dump->add_option("--checkpoint", dump_checkpoint, "checkpoint file")->required();
  dump->add_option("--manifest", dump_manifest, "JSON Lines manifest")->required();
  dump->add_option("--vocab", dump_vocab, "vocabulary file that must match the checkpoint");

  std::vector<std::string> argv_store{"scob"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  RunRecord record;
  record.args = args;
  Common* common = nullptr;
  CLI::App* sub = app.get_subcommands().front();
  record.command = sub->get_name();
  if (sub == render) common = &render_c;
  if (sub == pre) common = &pretrain_c;
  if (sub == ev) common = &eval_c;
  if (sub == bench) common = &bench_c;
  if (sub == dump) common = &dump_c;
  if (!common->out.empty()) record.dir = common->out;

  int status = kExitOk;
  std::string error;
  try {
    if (!record.dir.empty()) std::filesystem::create_directories(record.dir);
    const TrainConfig c = resolve_config(*common, record);
    if (sub == render) status = cmd_render(c, count, parse_domain(domain_name), record, out);
    if (sub == pre) status = cmd_pretrain(c, resume, record, out);
    if (sub == ev) status = cmd_eval(c, checkpoint, manifest, vocab_file, iou, record, out);
    if (sub == bench) status = cmd_bench(c, bench_n, compare, parse_domain(bench_domain), record, out);
    if (sub == dump) status = cmd_dump(c, dump_checkpoint, dump_manifest, dump_vocab, record, out);
  } catch (const NumericAbort& e) {
    status = kExitNumeric;
    error = e.what();
  } catch (const IoError& e) {
    status = kExitIo;
    error = e.what();
  } catch (const std::filesystem::filesystem_error& e) {
    status = kExitIo;
    error = e.what();
  } catch (const Error& e) {
    status = kExitConfig;
    error = e.what();
  }
  if (!error.empty()) err << "scob " << record.command << ": " << error << '\n';
  try {
    record.write(status, error);
  } catch (const std::exception& e) {
    err << "scob " << record.command << ": cannot write run manifest: " << e.what() << '\n';
    if (status == kExitOk) status = kExitIo;
  }
  return status;
}

}  // namespace scob::cli
