#include "scob/trainer/trainer.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <future>
#include <nlohmann/json.hpp>

#include "scob/config/config.hpp"
#include "scob/model/checkpoint.hpp"
#include "scob/util/atomic_file.hpp"
#include "scob/util/errors.hpp"
#include "scob/util/utf8.hpp"

namespace scob {

using nn::Matrix;
using nn::Var;

std::string to_string(Task t) { return t == Task::kTextRead ? "text_read" : "ocr_read"; }

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kVanilla: return "vanilla";
    case TrainMode::kSupConOnly: return "supcon_only";
    case TrainMode::kRenderOnly: return "render_only";
    case TrainMode::kScob: return "scob";
    case TrainMode::kScobFullAnnotation: return "scob_full_annotation";
  }
  return "scob";
}

std::string to_string(OrderPolicy p) {
  switch (p) {
    case OrderPolicy::kAuto: return "auto";
    case OrderPolicy::kRaster: return "raster";
    case OrderPolicy::kRandom: return "random";
  }
  return "auto";
}

Task parse_task(std::string_view s) {
  if (s == "text_read") return Task::kTextRead;
  if (s == "ocr_read") return Task::kOcrRead;
  throw ConfigError(fmt::format("unknown task '{}' (text_read or ocr_read)", s));
}

TrainMode parse_train_mode(std::string_view s) {
  for (auto m : {TrainMode::kVanilla, TrainMode::kSupConOnly, TrainMode::kRenderOnly, TrainMode::kScob,
                 TrainMode::kScobFullAnnotation}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError(
      fmt::format("unknown mode '{}' (vanilla, supcon_only, render_only, scob, scob_full_annotation)", s));
}

OrderPolicy parse_order_policy(std::string_view s) {
  for (auto p : {OrderPolicy::kAuto, OrderPolicy::kRaster, OrderPolicy::kRandom}) {
    if (s == to_string(p)) return p;
  }
  throw ConfigError(fmt::format("unknown word order '{}' (auto, raster or random)", s));
}

ModeTraits traits(TrainMode mode) {
  switch (mode) {
    case TrainMode::kVanilla: return {false, false, false, false};
    case TrainMode::kSupConOnly: return {true, false, false, true};
    case TrainMode::kRenderOnly: return {true, true, true, false};
    case TrainMode::kScob: return {true, true, true, true};
    case TrainMode::kScobFullAnnotation: return {true, true, false, true};
  }
  return {};
}

namespace {

RenderConfig resolve_render(RenderConfig r, const TrainConfig& c) {
  r.charset = c.charset;
  if (r.font_dir.empty()) r.font_dir = c.render.font_dir;
  return r;
}

bool uses_source(const SourceConfig& s) { return s.ratio > 0; }

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](std::string msg) { throw ConfigError(std::move(msg)); };
  if (steps < 1) fail(fmt::format("train.steps must be >= 1, got {}", steps));
  if (batch_size < 1) fail(fmt::format("train.batch_size must be >= 1, got {}", batch_size));
  if (!(lr_peak > 0)) fail("train.lr_peak must be positive");
  if (!(warmup_fraction >= 0 && warmup_fraction < 1)) fail("train.warmup_fraction must lie in [0, 1)");
  if (!(grad_clip >= 0)) fail("train.grad_clip must be >= 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) fail("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) fail("train.adam_eps must be positive");
  if (checkpoint_every < 0) fail("train.checkpoint_every must be >= 0");
  if (log_every < 1) fail("train.log_every must be >= 1");
  if (threads < 1) fail("train.threads must be >= 1");
  if (!(synthetic.ratio >= 0 && real.ratio >= 0) || std::abs(synthetic.ratio + real.ratio - 1.0) > 1e-9) {
    fail(fmt::format("data.synthetic.ratio + data.real.ratio must be 1, got {} + {}", synthetic.ratio, real.ratio));
  }
  loss.validate();
  augment.validate();
  if (charset.empty()) fail("vocab.charset is empty");
  Vocab vocab(charset);
  ModelConfig m = model;
  m.vocab_size = vocab.size();
  m.validate();

  if (traits(mode).rendered_view) resolve_render(render, *this).validate();
  for (const auto* s : {&synthetic, &real}) {
    if (!uses_source(*s)) continue;
    if (s->manifest.empty()) {
      resolve_render(s->render, *this).validate();
      if (s->word_count.lo < 0 || s->word_count.hi < s->word_count.lo) fail("invalid word_count range");
      if (s->word_length.lo < 1 || s->word_length.hi < s->word_length.lo) fail("invalid word_length range");
    }
  }
  const bool full_supervision = task == Task::kOcrRead && !traits(mode).weak_real;
  if (full_supervision && uses_source(real) && real.manifest.empty() && !real.boxes) {
    fail(fmt::format("mode {} needs boxes on real data, but data.real.boxes is false", to_string(mode)));
  }
  if (task == Task::kOcrRead && uses_source(synthetic) && synthetic.manifest.empty() && !synthetic.boxes) {
    fail("synthetic samples must carry boxes for OCR-read");
  }
}

int warmup_steps(const TrainConfig& config) {
  return static_cast<int>(std::lround(config.warmup_fraction * config.steps));
}

double lr_at(int step, const TrainConfig& config) {
  const int total = config.steps;
  const int warm = warmup_steps(config);
  if (step < 0 || step > total) throw RangeError(fmt::format("lr_at: step {} outside [0, {}]", step, total));
  if (step < warm) return config.lr_peak * static_cast<double>(step) / warm;
  if (total == warm) return config.lr_peak;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return config.lr_peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

Vocab make_vocab(const TrainConfig& config) { return Vocab(config.charset); }

ModelConfig resolved_model_config(const TrainConfig& config, const Vocab& vocab) {
  ModelConfig m = config.model;
  m.vocab_size = vocab.size();
  return m;
}

RenderedSample fit_to_side(const RenderedSample& sample, int side) {
  if (sample.image.width == side && sample.image.height == side) return sample;
  RenderedSample out = sample;
  out.image = resize(sample.image, side, side);
  const double sx = static_cast<double>(side) / sample.image.width;
  const double sy = static_cast<double>(side) / sample.image.height;
  auto scale = [&](const BBox& b) {
    return BBox{std::min(b.x_min * sx, double(side)), std::min(b.y_min * sy, double(side)),
                std::min(b.x_max * sx, double(side)), std::min(b.y_max * sy, double(side))};
  };
  for (auto& w : out.words) {
    if (w.bbox) w.bbox = scale(*w.bbox);
    for (auto& c : w.char_boxes) c = scale(c);
  }
  return out;
}

DataSampler::DataSampler(const TrainConfig& config) : config_(config) {
  for (char32_t c : utf8::decode(config.charset)) {
    if (c != U' ') word_charset_.push_back(c);
  }
  auto setup = [&](const SourceConfig& sc, Source& src) {
    src.config = sc;
    if (!uses_source(sc)) return;
    if (!sc.manifest.empty()) {
      if (!std::filesystem::exists(sc.manifest)) {
        throw ConfigError(fmt::format("manifest {} does not exist", sc.manifest.string()));
      }
      src.entries = read_manifest(sc.manifest);
      if (src.entries.empty()) throw ConfigError(fmt::format("manifest {} is empty", sc.manifest.string()));
      const bool needs_boxes =
          config.task == Task::kOcrRead && (&sc == &config.synthetic || !traits(config.mode).weak_real);
      if (needs_boxes) {
        for (std::size_t i = 0; i < src.entries.size(); ++i) {
          for (const auto& w : src.entries[i].words) {
            if (!w.bbox) {
              throw ConfigError(fmt::format("{} line {}: word '{}' has no box, which mode {} requires",
                                            sc.manifest.string(), i + 1, w.text, to_string(config.mode)));
            }
          }
        }
      }
      if (std::any_of(src.entries.begin(), src.entries.end(), [](const ManifestEntry& e) { return !e.image; })) {
        src.renderer = std::make_shared<Renderer>(resolve_render(sc.render, config));
      }
    } else {
      src.renderer = std::make_shared<Renderer>(resolve_render(sc.render, config));
    }
  };
  setup(config.synthetic, synthetic_);
  setup(config.real, real_);
}

RenderedSample DataSampler::draw(Rng& rng) const {
  const Domain d = rng.bernoulli(config_.real.ratio) ? Domain::kReal : Domain::kSynthetic;
  return draw(d, rng);
}

RenderedSample DataSampler::draw(Domain domain, Rng& rng) const {
  const Source& src = source(domain);
  if (!uses_source(src.config)) throw ConfigError(fmt::format("the {} source has ratio 0", to_string(domain)));
  RenderedSample s;
  if (!src.entries.empty()) {
    const auto& e = src.entries[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(src.entries.size()) - 1))];
    const std::uint64_t seed = rng.next_u64();
    if (e.image) {
      s = load_sample(e);
    } else {
      std::vector<std::string> texts;
      for (const auto& w : e.words) texts.push_back(w.text);
      s = src.renderer->render(texts, e.seed.value_or(seed));
    }
    s.domain = e.domain;
  } else {
    const auto words = random_words(word_charset_, src.config.word_count, src.config.word_length, rng);
    s = src.renderer->render(words, rng.next_u64());
    s.domain = domain;
    if (!src.config.boxes) {
      for (auto& w : s.words) {
        w.bbox.reset();
        w.char_boxes.clear();
      }
    }
  }
  return fit_to_side(s, config_.model.image_side);
}

namespace {

WordOrder order_for(const TrainConfig& config, bool masked) {
  // Masked members never read their boxes, so they cannot use raster order.
  if (masked) return WordOrder::kRandom;
  switch (config.word_order) {
    case OrderPolicy::kRaster: return WordOrder::kRaster;
    case OrderPolicy::kRandom: return WordOrder::kRandom;
    case OrderPolicy::kAuto: return traits(config.mode).rendered_view ? WordOrder::kRandom : WordOrder::kRaster;
  }
  return WordOrder::kRaster;
}

TargetSequence encode_member(const RenderedSample& s, const Vocab& vocab, const TrainConfig& config, bool weak, Rng& rng,
                             bool* masked) {
  const auto max_len = static_cast<std::size_t>(config.model.max_len);
  *masked = false;
  if (config.task == Task::kTextRead) return encode_text_read(s, vocab, max_len);
  *masked = weak && s.domain == Domain::kReal;
  return encode_ocr_read(s, vocab, order_for(config, *masked), weak, rng, max_len);
}

}  // namespace

MultiviewBatch build_multiview_batch(const std::vector<RenderedSample>& originals, const Renderer& renderer,
                                     const Vocab& vocab, const TrainConfig& config, Rng& rng) {
  const ModeTraits t = traits(config.mode);
  MultiviewBatch batch;
  batch.pairs = originals.size();
  std::vector<BatchMember> partners;
  for (std::size_t i = 0; i < originals.size(); ++i) {
    const RenderedSample& orig = originals[i];
    BatchMember m;
    m.sample = orig;
    m.pair = i;
    m.original = true;
    m.seq = encode_member(orig, vocab, config, t.weak_real, rng, &m.masked);
    batch.sample_seeds.push_back(orig.seed);

    if (t.second_view) {
      BatchMember p;
      p.pair = i;
      p.original = false;
      if (t.rendered_view) {
        std::vector<std::string> texts;
        for (const auto& w : orig.words) texts.push_back(w.text);
        p.sample = fit_to_side(renderer.render(texts, rng.next_u64()), config.model.image_side);
      } else {
        p.sample = augment(orig, config.augment, rng);
      }
      p.seq = encode_member(p.sample, vocab, config, t.weak_real, rng, &p.masked);
      partners.push_back(std::move(p));
    }
    batch.members.push_back(std::move(m));
  }
  for (auto& p : partners) {
    batch.sample_seeds.push_back(p.sample.seed);
    batch.members.push_back(std::move(p));
  }
  return batch;
}

MultiviewBatch make_step_batch(const DataSampler& sampler, const Renderer& renderer, const Vocab& vocab,
                               const TrainConfig& config, int step) {
  Rng rng = Rng::child(config.seed, static_cast<std::uint64_t>(step));
  std::vector<RenderedSample> originals;
  for (int i = 0; i < config.batch_size; ++i) originals.push_back(sampler.draw(rng));
  MultiviewBatch batch = build_multiview_batch(originals, renderer, vocab, config, rng);
  batch.step_seed = Rng::child(config.seed, static_cast<std::uint64_t>(step)).next_u64();
  return batch;
}

template <typename T>
Var<T> batch_loss_t(const Model<T>& model, const MultiviewBatch& batch, const TrainConfig& config,
                    LossBreakdown* breakdown) {
  const bool supcon = traits(config.mode).supcon;
  std::vector<MemberOutputs<T>> outs;
  outs.reserve(batch.members.size());
  for (const auto& m : batch.members) {
    const auto dec = model.forward_teacher_forced(m.sample.image, m.seq.input_ids);
    MemberOutputs<T> o;
    o.logits = dec.logits;
    o.targets = m.seq.target_ids;
    o.weights = m.seq.loss_weights;
    if (supcon) {
      std::vector<int> rows;
      for (std::size_t i = 0; i < m.seq.supcon_labels.size(); ++i) {
        if (m.seq.supcon_labels[i] != kNoLabel) {
          rows.push_back(static_cast<int>(i));
          o.labels.push_back(m.seq.supcon_labels[i]);
        }
      }
      if (!rows.empty()) o.z = model.project(nn::gather_rows(dec.hidden, std::span<const int>(rows)));
    }
    outs.push_back(std::move(o));
  }
  return total_loss(outs, config.loss, supcon, breakdown);
}

Var<float> batch_loss(const Model<float>& model, const MultiviewBatch& batch, const TrainConfig& config,
                      LossBreakdown* breakdown) {
  return batch_loss_t<float>(model, batch, config, breakdown);
}

template Var<float> batch_loss_t<float>(const Model<float>&, const MultiviewBatch&, const TrainConfig&, LossBreakdown*);
template Var<double> batch_loss_t<double>(const Model<double>&, const MultiviewBatch&, const TrainConfig&,
                                          LossBreakdown*);

Adam::Adam(const nn::ParamList<float>& params, double beta1, double beta2, double eps)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Matrix<float>::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(Matrix<float>::Zero(p.var.rows(), p.var.cols()));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  const float step_size = static_cast<float>(lr / c1);
  const float inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
  const float eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto var = params_[i].var;
    const Matrix<float>& g = var.grad();
    if (g.size() == 0) continue;  // untouched this step: moments and value stay
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseProduct(g);
    var.mutable_value().array() -=
        step_size * m_[i].array() / ((v_[i].array().sqrt() * inv_sqrt_c2) + eps);
  }
}

std::string StepMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["total"] = total;
  j["token"] = token;
  j["supcon"] = supcon;
  j["supcon_per_anchor"] = supcon_per_anchor;
  j["anchors"] = anchors;
  j["grad_norm"] = grad_norm;
  j["grad_norm_pre_clip"] = grad_norm_pre_clip;
  j["lr"] = lr;
  j["members"] = members;
  return j.dump();
}

namespace {

std::string seeds_text(const MultiviewBatch& batch) {
  std::string s;
  for (auto v : batch.sample_seeds) s += (s.empty() ? "" : ",") + std::to_string(v);
  return s;
}

double global_norm(const nn::ParamList<float>& params) {
  double sq = 0;
  for (const auto& p : params) {
    const auto& g = p.var.grad();
    if (g.size() == 0) continue;
    sq += g.template cast<double>().squaredNorm();
  }
  return std::sqrt(sq);
}

}  // namespace

StepMetrics train_step(Model<float>& model, Adam& adam, const MultiviewBatch& batch, const TrainConfig& config,
                       int step) {
  for (const auto& p : model.parameters()) {
    auto v = p.var;
    v.mutable_grad().resize(0, 0);
  }
  LossBreakdown b;
  const Var<float> loss = batch_loss(model, batch, config, &b);
  StepMetrics m;
  m.step = step + 1;
  m.total = b.total;
  m.token = b.token;
  m.supcon = b.supcon;
  m.supcon_per_anchor = b.supcon_per_anchor;
  m.anchors = b.anchors;
  m.members = batch.members.size();
  m.lr = lr_at(step + 1, config);
  if (!std::isfinite(m.total)) {
    throw NumericAbort(fmt::format("non-finite loss {} at step {} (step seed {}, sample seeds {})", m.total, m.step,
                                   batch.step_seed, seeds_text(batch)));
  }
  nn::backward(loss);
  m.grad_norm_pre_clip = global_norm(model.parameters());
  if (!std::isfinite(m.grad_norm_pre_clip)) {
    throw NumericAbort(fmt::format("non-finite gradient at step {} (step seed {}, sample seeds {})", m.step,
                                   batch.step_seed, seeds_text(batch)));
  }
  if (config.grad_clip > 0 && m.grad_norm_pre_clip > config.grad_clip) {
    const float coef = static_cast<float>(config.grad_clip / m.grad_norm_pre_clip);
    for (const auto& p : model.parameters()) {
      auto v = p.var;
      if (v.grad().size() != 0) v.mutable_grad() *= coef;
    }
    m.grad_norm = global_norm(model.parameters());
  } else {
    m.grad_norm = m.grad_norm_pre_clip;
  }
  adam.step(m.lr);
  return m;
}

namespace {

std::string u64s(std::uint64_t v) { return std::to_string(v); }

CheckpointFile make_checkpoint(const Model<float>& model, const Adam& adam, const TrainConfig& config,
                               const Vocab& vocab, int step) {
  CheckpointFile f;
  nlohmann::ordered_json h;
  h["format"] = "scob-checkpoint";
  h["model"] = nlohmann::json::parse(model.config().to_json());
  nlohmann::ordered_json train = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_snapshot(config)) train[k] = v;
  h["train"] = std::move(train);
  h["task"] = to_string(config.task);
  h["mode"] = to_string(config.mode);
  h["vocab"] = vocab.serialize();
  h["vocab_hash"] = vocab.content_hash();
  h["step"] = step;
  h["seed"] = u64s(config.seed);
  const Rng next = Rng::child(config.seed, static_cast<std::uint64_t>(step));
  h["rng"] = {{"rule", "batch k uses Rng::child(seed, k)"},
              {"next_step", step},
              {"state", {u64s(next.state()[0]), u64s(next.state()[1]), u64s(next.state()[2]), u64s(next.state()[3])}}};
  h["adam"] = {{"t", adam.t()}, {"beta1", config.adam_beta1}, {"beta2", config.adam_beta2}, {"eps", config.adam_eps}};
  f.header = h.dump();
  append_model(f, model);
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    f.tensors.push_back(to_tensor("adam.m." + params[i].name, adam.m()[i]));
    f.tensors.push_back(to_tensor("adam.v." + params[i].name, adam.v()[i]));
  }
  return f;
}

void write_abort(const std::filesystem::path& run_dir, int step, const MultiviewBatch& batch, const std::string& what) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["error"] = what;
  j["step_seed"] = u64s(batch.step_seed);
  auto seeds = nlohmann::ordered_json::array();
  for (auto s : batch.sample_seeds) seeds.push_back(u64s(s));
  j["sample_seeds"] = std::move(seeds);
  auto words = nlohmann::ordered_json::array();
  for (const auto& m : batch.members) {
    auto ws = nlohmann::ordered_json::array();
    for (const auto& w : m.sample.words) ws.push_back(w.text);
    words.push_back(std::move(ws));
  }
  j["member_words"] = std::move(words);
  write_file_atomic(run_dir / "abort.json", j.dump(2) + "\n");
}

// Keeps the metrics lines with step <= `step`.
void truncate_metrics(const std::filesystem::path& path, int step) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step") || j["step"].get<int>() > step) continue;
    kept += line + "\n";
  }
  in.close();
  write_file_atomic(path, kept);
}

}  // namespace

CheckpointInfo read_checkpoint_info(const CheckpointFile& file) {
  try {
    const auto h = nlohmann::json::parse(file.header);
    if (h.value("format", "") != "scob-checkpoint") throw ConfigError("checkpoint header has an unknown format tag");
    CheckpointInfo info;
    info.model = ModelConfig::from_json(h.at("model").dump());
    info.vocab_text = h.at("vocab").get<std::string>();
    info.vocab_hash = h.at("vocab_hash").get<std::string>();
    info.step = h.at("step").get<int>();
    info.seed = std::stoull(h.at("seed").get<std::string>());
    info.task = parse_task(h.at("task").get<std::string>());
    info.mode = parse_train_mode(h.at("mode").get<std::string>());
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("malformed checkpoint header: {}", e.what()));
  }
}

PretrainResult pretrain(const TrainConfig& config, const std::filesystem::path& run_dir,
                        const PretrainOptions& options) {
  config.validate();
  const Vocab vocab = make_vocab(config);
  const ModelConfig mc = resolved_model_config(config, vocab);
  const DataSampler sampler(config);
  const Renderer renderer(resolve_render(config.render, config));

  Model<float> model(mc, config.seed);
  Adam adam(model.parameters(), config.adam_beta1, config.adam_beta2, config.adam_eps);
  int start = 0;
  if (options.resume) {
    const CheckpointFile f = CheckpointFile::load(*options.resume);
    const CheckpointInfo info = read_checkpoint_info(f);
    if (!(info.model == mc)) throw ConfigError("checkpoint model configuration differs from the run configuration");
    if (info.vocab_hash != vocab.content_hash()) throw ConfigError("checkpoint vocabulary differs from vocab.charset");
    if (info.seed != config.seed) throw ConfigError("checkpoint seed differs from train.seed");
    if (info.step > config.steps) throw ConfigError("checkpoint is past train.steps");
    restore_model(f, model);
    const auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      adam.m()[i] = from_tensor<float>(f.at("adam.m." + params[i].name));
      adam.v()[i] = from_tensor<float>(f.at("adam.v." + params[i].name));
    }
    adam.set_t(nlohmann::json::parse(f.header).at("adam").at("t").get<long>());
    start = info.step;
  }

  std::filesystem::create_directories(run_dir / "checkpoints");
  vocab.save(run_dir / "vocab.txt");
  PretrainResult result;
  result.metrics_log = run_dir / "metrics.jsonl";
  result.start_step = start;
  if (start == 0) {
    write_file_atomic(result.metrics_log, "");
  } else {
    truncate_metrics(result.metrics_log, start);
  }
  std::ofstream log(result.metrics_log, std::ios::app);
  if (!log) throw IoError(fmt::format("cannot open {}", result.metrics_log.string()));

  const int end = options.stop_after ? std::min(config.steps, *options.stop_after) : config.steps;
  auto checkpoint_path = [&](int step) { return run_dir / "checkpoints" / fmt::format("step-{:07d}.ckpt", step); };
  auto prepare = [&](int step) { return make_step_batch(sampler, renderer, vocab, config, step); };

  std::future<MultiviewBatch> next;
  if (config.threads > 1 && start < end) next = std::async(std::launch::async, prepare, start);
  int last_saved = -1;
  for (int step = start; step < end; ++step) {
    MultiviewBatch batch = next.valid() ? next.get() : prepare(step);
    if (config.threads > 1 && step + 1 < end) next = std::async(std::launch::async, prepare, step + 1);
    StepMetrics m;
    try {
      m = train_step(model, adam, batch, config, step);
    } catch (const NumericAbort& e) {
      if (next.valid()) next.wait();
      write_abort(run_dir, step + 1, batch, e.what());
      throw;
    }
    result.metrics.push_back(m);
    if (m.step % config.log_every == 0 || m.step == config.steps) {
      log << m.to_json() << '\n';
      log.flush();
    }
    if (options.on_step) options.on_step(m);
    if (config.checkpoint_every > 0 && m.step % config.checkpoint_every == 0) {
      make_checkpoint(model, adam, config, vocab, m.step).save(checkpoint_path(m.step));
      last_saved = m.step;
    }
  }
  if (last_saved != end) make_checkpoint(model, adam, config, vocab, end).save(checkpoint_path(end));
  result.final_checkpoint = checkpoint_path(end);
  result.end_step = end;
  return result;
}

}  // namespace scob
