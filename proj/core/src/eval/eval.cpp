#include "scob/eval/eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <nlohmann/json.hpp>
#include <numeric>
#include <tuple>

#include "scob/util/atomic_file.hpp"
#include "scob/util/errors.hpp"
#include "scob/util/rng.hpp"
#include "scob/util/utf8.hpp"

namespace scob {

std::size_t edit_distance(std::u32string_view a, std::u32string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double ned(std::string_view pred, std::string_view gt) {
  const std::u32string p = utf8::decode(pred);
  const std::u32string g = utf8::decode(gt);
  const std::size_t n = std::max(p.size(), g.size());
  if (n == 0) return 0.0;
  return static_cast<double>(edit_distance(p, g)) / static_cast<double>(n);
}

E2EResult e2e_from_counts(std::size_t tp, std::size_t predictions, std::size_t ground_truths) {
  E2EResult r;
  r.true_positives = tp;
  r.predictions = predictions;
  r.ground_truths = ground_truths;
  r.precision = predictions ? static_cast<double>(tp) / predictions : 0.0;
  r.recall = ground_truths ? static_cast<double>(tp) / ground_truths : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

namespace {

auto word_key(const DecodedWord& w) { return std::tie(w.box.x_min, w.box.y_min, w.box.x_max, w.box.y_max, w.text); }

}  // namespace

E2EResult e2e_f1(const std::vector<DecodedWord>& preds, const std::vector<DecodedWord>& gts, double iou_threshold) {
  struct Pair {
    double iou;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(preds[p].box, gts[g].box);
      if (v > 0) pairs.push_back({v, p, g});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (word_key(preds[a.p]) != word_key(preds[b.p])) return word_key(preds[a.p]) < word_key(preds[b.p]);
    return word_key(gts[a.g]) < word_key(gts[b.g]);
  });
  std::vector<bool> pred_used(preds.size()), gt_used(gts.size());
  std::size_t tp = 0;
  for (const auto& pr : pairs) {
    if (pred_used[pr.p] || gt_used[pr.g]) continue;
    pred_used[pr.p] = gt_used[pr.g] = true;
    if (pr.iou >= iou_threshold && preds[pr.p].text == gts[pr.g].text) ++tp;
  }
  return e2e_from_counts(tp, preds.size(), gts.size());
}

SilhouetteResult silhouette(const nn::Matrix<double>& z, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(z.rows()) != labels.size()) {
    throw InputError(fmt::format("silhouette: {} rows but {} labels", z.rows(), labels.size()));
  }
  SilhouetteResult r;
  std::map<int, std::vector<Eigen::Index>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(static_cast<Eigen::Index>(i));
  std::vector<int> classes;
  for (const auto& [c, idx] : members) {
    if (idx.size() < 2) {
      r.excluded.push_back(c);
      r.warnings.push_back(fmt::format("class {} has {} member(s) and is excluded", c, idx.size()));
    } else {
      classes.push_back(c);
    }
  }
  if (classes.size() < 2) {
    r.warnings.push_back(fmt::format("silhouette needs two classes with two members each, found {}", classes.size()));
    return r;
  }
  r.defined = true;
  // Mean distance from point i to every member of class c (excluding i).
  auto mean_dist = [&](Eigen::Index i, int c) {
    double sum = 0;
    std::size_t n = 0;
    for (Eigen::Index j : members[c]) {
      if (j == i) continue;
      sum += (z.row(i) - z.row(j)).norm();
      ++n;
    }
    return sum / static_cast<double>(n);
  };
  double macro = 0;
  for (int c : classes) {
    double class_sum = 0;
    for (Eigen::Index i : members[c]) {
      const double a = mean_dist(i, c);
      double b = std::numeric_limits<double>::infinity();
      for (int o : classes) {
        if (o != c) b = std::min(b, mean_dist(i, o));
      }
      const double m = std::max(a, b);
      class_sum += m > 0 ? (b - a) / m : 0.0;
      ++r.points;
    }
    const double s = class_sum / static_cast<double>(members[c].size());
    r.by_class[c] = s;
    macro += s;
  }
  r.macro = macro / static_cast<double>(classes.size());
  return r;
}

namespace {

bool all_boxed(const RenderedSample& s) {
  return std::all_of(s.words.begin(), s.words.end(), [](const WordAnnotation& w) { return w.bbox.has_value(); });
}

TargetSequence teacher_sequence(const RenderedSample& s, const Vocab& vocab, Task task, std::size_t max_len) {
  if (task == Task::kTextRead) return encode_text_read(s, vocab, max_len);
  Rng unused(0);
  if (all_boxed(s)) return encode_ocr_read(s, vocab, WordOrder::kRaster, false, unused, max_len);
  RenderedSample masked = s;
  masked.domain = Domain::kReal;
  return encode_ocr_read(masked, vocab, WordOrder::kGiven, true, unused, max_len);
}

}  // namespace

EmbeddingSet extract_embeddings(const Model<float>& model, const Vocab& vocab, const std::vector<RenderedSample>& samples,
                                Task task) {
  nn::NoGradGuard no_grad;
  const auto max_len = static_cast<std::size_t>(model.config().max_len);
  std::vector<nn::Matrix<float>> blocks;
  EmbeddingSet set;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const TargetSequence seq = teacher_sequence(samples[s], vocab, task, max_len);
    std::vector<int> rows;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq.supcon_labels[i] == kNoLabel) continue;
      rows.push_back(static_cast<int>(i));
      set.labels.push_back(seq.supcon_labels[i]);
      set.sample.push_back(s);
      set.position.push_back(i);
    }
    if (rows.empty()) continue;
    const auto dec = model.forward_teacher_forced(samples[s].image, seq.input_ids);
    blocks.push_back(model.project(nn::gather_rows(dec.hidden, std::span<const int>(rows))).value());
  }
  const Eigen::Index dim = model.config().projector_out;
  set.z.resize(static_cast<Eigen::Index>(set.labels.size()), dim);
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    set.z.middleRows(r, b.rows()) = b.cast<double>();
    r += b.rows();
  }
  return set;
}

void write_embeddings_tsv(const EmbeddingSet& set, const Vocab& vocab, const std::filesystem::path& path,
                          const std::vector<std::string>& sample_ids) {
  std::string out = "sample\tposition\tclass\tchar";
  for (Eigen::Index k = 0; k < set.z.cols(); ++k) out += fmt::format("\tz{}", k);
  out += '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::string id = set.sample[i] < sample_ids.size() ? sample_ids[set.sample[i]] : std::to_string(set.sample[i]);
    const char32_t cp = vocab.charset()[static_cast<std::size_t>(set.labels[i])];
    const std::string ch = cp <= 0x20 || cp == 0x7F ? fmt::format("U+{:04X}", static_cast<unsigned>(cp)) : utf8::encode(cp);
    out += fmt::format("{}\t{}\t{}\t{}", id, set.position[i], set.labels[i], ch);
    for (Eigen::Index k = 0; k < set.z.cols(); ++k) out += fmt::format("\t{}", set.z(static_cast<Eigen::Index>(i), k));
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::string reference_text(const RenderedSample& sample) {
  if (all_boxed(sample)) {
    std::vector<DecodedWord> words;
    for (const auto& w : sample.words) words.push_back({*w.bbox, w.text});
    return join_raster(words);
  }
  std::string out;
  for (const auto& w : sample.words) out += (out.empty() ? "" : " ") + w.text;
  return out;
}

EvalReport evaluate(const Model<float>& model, const Vocab& vocab, const std::vector<RenderedSample>& samples,
                    const EvalOptions& options) {
  EvalReport report;
  report.count = samples.size();
  const auto max_len = static_cast<std::size_t>(model.config().max_len);
  const TokenId prompt = options.task == Task::kTextRead ? vocab.prompt_text_read() : vocab.prompt_ocr_read();
  double ned_sum = 0;
  std::size_t tp = 0, preds = 0, gts = 0;
  for (const auto& s : samples) {
    const auto ids = model.generate(s.image, prompt, max_len, vocab.eos());
    if (options.task == Task::kTextRead) {
      ned_sum += ned(decode_text_read(ids, vocab), reference_text(s));
      continue;
    }
    const DecodeResult dec = decode_ocr_read(ids, vocab, s.image.width, s.image.height);
    ned_sum += ned(join_raster(dec.words), reference_text(s));
    if (!all_boxed(s)) continue;
    std::vector<DecodedWord> gt;
    for (const auto& w : s.words) gt.push_back({*w.bbox, w.text});
    const E2EResult e = e2e_f1(dec.words, gt, options.iou_threshold);
    tp += e.true_positives;
    preds += e.predictions;
    gts += e.ground_truths;
    ++report.e2e_samples;
  }
  report.ned_mean = samples.empty() ? 0.0 : ned_sum / static_cast<double>(samples.size());
  report.e2e = e2e_from_counts(tp, preds, gts);
  const EmbeddingSet emb = extract_embeddings(model, vocab, samples, options.task);
  report.silhouette = silhouette(emb.z, emb.labels);
  for (int c : emb.labels) report.class_names.emplace(c, utf8::encode(vocab.charset()[static_cast<std::size_t>(c)]));
  report.warnings = report.silhouette.warnings;
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["count"] = count;
  j["ned_mean"] = ned_mean;
  j["e2e"] = {{"precision", e2e.precision},
              {"recall", e2e.recall},
              {"f1", e2e.f1},
              {"true_positives", e2e.true_positives},
              {"predictions", e2e.predictions},
              {"ground_truths", e2e.ground_truths},
              {"samples", e2e_samples}};
  nlohmann::ordered_json by_class = nlohmann::ordered_json::object();
  for (const auto& [c, s] : silhouette.by_class) {
    const auto it = class_names.find(c);
    by_class[it != class_names.end() ? it->second : std::to_string(c)] = s;
  }
  nlohmann::ordered_json sil;
  sil["macro"] = silhouette.defined ? nlohmann::ordered_json(silhouette.macro) : nlohmann::ordered_json(nullptr);
  sil["points"] = silhouette.points;
  sil["by_class"] = std::move(by_class);
  sil["excluded_classes"] = silhouette.excluded;
  j["silhouette"] = std::move(sil);
  j["config"] = nlohmann::ordered_json::parse(config_json);
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

}  // namespace scob
