#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scob/model/checkpoint.hpp"
#include "scob/model/model.hpp"
#include "scob/objectives/losses.hpp"
#include "scob/render/augment.hpp"
#include "scob/render/renderer.hpp"
#include "scob/render/sample_io.hpp"
#include "scob/seqcodec/codec.hpp"

namespace scob {

enum class Task { kTextRead, kOcrRead };

// Ablation presets.
//   vanilla              originals only, full supervision, token loss
//   supcon_only          originals + photometric copies, full supervision, token + SupCon
//   render_only          originals (weak) + rendered copies, token loss only
//   scob                 originals (weak) + rendered copies, token + SupCon
//   scob_full_annotation originals (full) + rendered copies, token + SupCon
enum class TrainMode { kVanilla, kSupConOnly, kRenderOnly, kScob, kScobFullAnnotation };

enum class OrderPolicy { kAuto, kRaster, kRandom };

std::string to_string(Task t);
std::string to_string(TrainMode m);
std::string to_string(OrderPolicy p);
Task parse_task(std::string_view s);            // throws ConfigError
TrainMode parse_train_mode(std::string_view s);  // throws ConfigError
OrderPolicy parse_order_policy(std::string_view s);

struct ModeTraits {
  bool second_view = false;  // each original gets a partner view
  bool rendered_view = false;  // partner is rendered (else augmented)
  bool weak_real = false;      // real-domain originals are coordinate-masked
  bool supcon = false;
};
ModeTraits traits(TrainMode mode);

// Where samples of one domain come from: a JSON Lines manifest, or (when
// no manifest is set) words drawn from the charset and rendered on the fly
// with `render`.
struct SourceConfig {
  double ratio = 0.5;
  std::filesystem::path manifest;
  RenderConfig render;
  IntRange word_count{1, 3};
  IntRange word_length{2, 5};
  // Keep the boxes of generated samples. Without them only weakly
  // supervised modes (or text-read) can consume this source.
  bool boxes = true;
};

struct TrainConfig {
  int steps = 1000;
  int batch_size = 4;  // originals per step
  double lr_peak = 1e-4;
  double warmup_fraction = 0.1;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  Task task = Task::kOcrRead;
  TrainMode mode = TrainMode::kScob;
  OrderPolicy word_order = OrderPolicy::kAuto;
  std::string charset = default_charset();

  SourceConfig synthetic;
  SourceConfig real;
  RenderConfig render;  // renderer for the partner views
  AugmentConfig augment;
  ModelConfig model;
  LossConfig loss;

  int checkpoint_every = 0;  // 0: final checkpoint only
  int log_every = 1;
  int threads = 1;  // >1 prepares the next batch on a worker thread

  // Throws ConfigError for the first violated invariant (including
  // full-supervision modes paired with boxless generated real data).
  void validate() const;
};

// Learning rate after `step` completed updates: linear warmup from 0 to
// lr_peak over round(warmup_fraction * steps) steps, then cosine decay to 0
// at `steps`.
double lr_at(int step, const TrainConfig& config);

// Number of warmup steps used by lr_at.
int warmup_steps(const TrainConfig& config);

// Vocabulary over the configured charset.
Vocab make_vocab(const TrainConfig& config);

// Model configuration with vocab_size filled in from `vocab`.
ModelConfig resolved_model_config(const TrainConfig& config, const Vocab& vocab);

// Resized copy whose image is side x side; boxes scale with the image.
RenderedSample fit_to_side(const RenderedSample& sample, int side);

/// Draws original samples from the two domain sources.
class DataSampler {
 public:
  // Loads manifests (IoError/InputError on failure) and fonts.
  explicit DataSampler(const TrainConfig& config);

  // Domain chosen by ratio, then an item from that domain's source.
  RenderedSample draw(Rng& rng) const;
  RenderedSample draw(Domain domain, Rng& rng) const;

 private:
  struct Source {
    SourceConfig config;
    std::vector<ManifestEntry> entries;
    std::shared_ptr<Renderer> renderer;
  };
  const Source& source(Domain d) const { return d == Domain::kReal ? real_ : synthetic_; }

  TrainConfig config_;
  std::u32string word_charset_;
  Source synthetic_;
  Source real_;
};

struct BatchMember {
  RenderedSample sample;
  TargetSequence seq;
  std::size_t pair = 0;  // index of the original this member belongs to
  bool original = true;  // false for the partner view
  bool masked = false;   // coordinates fed as MASK with zero weight
};

struct MultiviewBatch {
  std::vector<BatchMember> members;
  std::size_t pairs = 0;
  std::uint64_t step_seed = 0;
  std::vector<std::uint64_t> sample_seeds;  // originals then partners, for diagnostics
};

/// Encodes each original per mode and adds its partner view: a rendering of
/// the same word texts with a fresh seed, or a photometric copy. Throws
/// InputError when full supervision meets a boxless original.
MultiviewBatch build_multiview_batch(const std::vector<RenderedSample>& originals, const Renderer& renderer,
                                     const Vocab& vocab, const TrainConfig& config, Rng& rng);

// Batch for optimization step `step`: originals drawn from the stream
// Rng::child(seed, step), so batches do not depend on earlier steps.
MultiviewBatch make_step_batch(const DataSampler& sampler, const Renderer& renderer, const Vocab& vocab,
                               const TrainConfig& config, int step);

// Loss of a batch without touching parameters. Builds the graph when
// recording is enabled.
nn::Var<float> batch_loss(const Model<float>& model, const MultiviewBatch& batch, const TrainConfig& config,
                          LossBreakdown* breakdown = nullptr);

template <typename T>
nn::Var<T> batch_loss_t(const Model<T>& model, const MultiviewBatch& batch, const TrainConfig& config,
                        LossBreakdown* breakdown = nullptr);

class Adam {
 public:
  Adam(const nn::ParamList<float>& params, double beta1, double beta2, double eps);

  // One update with learning rate `lr` using the current parameter grads.
  void step(double lr);

  long t() const { return t_; }
  void set_t(long t) { t_ = t; }
  std::vector<nn::Matrix<float>>& m() { return m_; }
  std::vector<nn::Matrix<float>>& v() { return v_; }
  const std::vector<nn::Matrix<float>>& m() const { return m_; }
  const std::vector<nn::Matrix<float>>& v() const { return v_; }

 private:
  nn::ParamList<float> params_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<nn::Matrix<float>> m_, v_;
};

struct StepMetrics {
  int step = 0;  // updates completed, including this one
  double total = 0;
  double token = 0;
  double supcon = 0;
  double supcon_per_anchor = 0;
  int anchors = 0;
  double grad_norm = 0;  // after clipping
  double grad_norm_pre_clip = 0;
  double lr = 0;
  std::size_t members = 0;

  std::string to_json() const;
};

/// Evaluates the batch loss, back-propagates, clips the global gradient
/// norm and applies one Adam update with lr_at(step + 1). `step` counts
/// completed updates before this one. Throws NumericAbort (naming the batch
/// seeds) when the loss or gradient is not finite; parameters are then left
/// untouched.
StepMetrics train_step(Model<float>& model, Adam& adam, const MultiviewBatch& batch, const TrainConfig& config,
                       int step);

struct PretrainOptions {
  std::optional<std::filesystem::path> resume;  // checkpoint to continue from
  // Stop after this many completed steps (for tests that interrupt runs).
  std::optional<int> stop_after;
  std::function<void(const StepMetrics&)> on_step;
};

struct PretrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_log;
  std::vector<StepMetrics> metrics;  // steps run by this call
  int start_step = 0;
  int end_step = 0;
};

/// Runs (or resumes) pre-training into `run_dir`: writes vocab.txt,
/// metrics.jsonl (one JSON object per logged step) and
/// checkpoints/step-<n>.ckpt every checkpoint_every steps and at the end.
/// Resuming truncates the metrics log to the checkpoint's step. On a
/// numeric abort a diagnostic abort.json is written before rethrowing.
PretrainResult pretrain(const TrainConfig& config, const std::filesystem::path& run_dir,
                        const PretrainOptions& options = {});

// Checkpoint header helpers shared with evaluation.
struct CheckpointInfo {
  ModelConfig model;
  std::string vocab_text;
  std::string vocab_hash;
  int step = 0;
  std::uint64_t seed = 0;
  Task task = Task::kOcrRead;
  TrainMode mode = TrainMode::kScob;
};
CheckpointInfo read_checkpoint_info(const CheckpointFile& file);  // throws ConfigError

}  // namespace scob
