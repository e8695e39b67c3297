#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "scob/model/model.hpp"
#include "scob/nn/tensor.hpp"
#include "scob/seqcodec/codec.hpp"
#include "scob/trainer/trainer.hpp"

namespace scob {

// Levenshtein distance over code points.
std::size_t edit_distance(std::u32string_view a, std::u32string_view b);

// edit_distance / max(len(pred), len(gt)) on code points; 0 when both are
// empty.
double ned(std::string_view pred, std::string_view gt);

struct E2EResult {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t true_positives = 0;
  std::size_t predictions = 0;
  std::size_t ground_truths = 0;
};

// Precision/recall/F1 from summed counts; each rate is 0 when its
// denominator is.
E2EResult e2e_from_counts(std::size_t tp, std::size_t predictions, std::size_t ground_truths);

/// Greedy one-to-one matching: candidate pairs with positive IoU are taken
/// in order of decreasing IoU, skipping pairs whose prediction or ground
/// truth is already matched. A matched pair is a true positive when its IoU
/// reaches `iou_threshold` and the texts are identical. Ties are broken on
/// the pair contents, not on list positions, so the result does not depend
/// on input order.
E2EResult e2e_f1(const std::vector<DecodedWord>& preds, const std::vector<DecodedWord>& gts,
                 double iou_threshold = 0.5);

struct SilhouetteResult {
  std::map<int, double> by_class;  // mean s(i) per scored class
  double macro = 0;                // mean over scored classes
  std::size_t points = 0;          // points that were scored
  std::vector<int> excluded;       // classes with fewer than two members
  bool defined = false;            // false when fewer than two classes qualify
  std::vector<std::string> warnings;
};

/// Silhouette with Euclidean distance. Classes with a single member are
/// excluded (with a warning) and take no part in any distance average. A
/// point whose a and b are both 0 scores 0.
SilhouetteResult silhouette(const nn::Matrix<double>& z, const std::vector<int>& labels);

/// Projected character embeddings from teacher-forced decoding: one row per
/// character position, in sample then position order.
struct EmbeddingSet {
  nn::Matrix<double> z;
  std::vector<int> labels;  // character class
  std::vector<std::size_t> sample;
  std::vector<std::size_t> position;  // index into the target sequence
  std::size_t size() const { return labels.size(); }
};

/// Samples with boxes are encoded with full supervision in raster order;
/// boxless samples use the masked encoding in annotation order.
EmbeddingSet extract_embeddings(const Model<float>& model, const Vocab& vocab, const std::vector<RenderedSample>& samples,
                                Task task);

/// Tab-separated: a header "sample<TAB>position<TAB>class<TAB>char<TAB>z0..."
/// then one row per embedding. Sample ids default to the sample index.
void write_embeddings_tsv(const EmbeddingSet& set, const Vocab& vocab, const std::filesystem::path& path,
                          const std::vector<std::string>& sample_ids = {});

struct EvalOptions {
  Task task = Task::kOcrRead;
  double iou_threshold = 0.5;
};

struct EvalReport {
  std::size_t count = 0;
  double ned_mean = 0;
  E2EResult e2e;
  std::size_t e2e_samples = 0;  // samples whose ground truth has boxes
  SilhouetteResult silhouette;
  std::map<int, std::string> class_names;
  std::string config_json = "{}";  // echoed verbatim
  std::vector<std::string> warnings;

  std::string to_json() const;
};

// Text of a sample's words in reading order (raster when every word has a
// box, annotation order otherwise), joined by single spaces.
std::string reference_text(const RenderedSample& sample);

/// Greedy generation on every sample for NED and end-to-end F1, plus the
/// silhouette of teacher-forced character projections.
EvalReport evaluate(const Model<float>& model, const Vocab& vocab, const std::vector<RenderedSample>& samples,
                    const EvalOptions& options);

}  // namespace scob
