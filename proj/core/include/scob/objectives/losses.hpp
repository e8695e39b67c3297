#pragma once

#include <functional>
#include <span>
#include <vector>

#include "scob/nn/tensor.hpp"
#include "scob/seqcodec/vocab.hpp"

namespace scob {

struct LossConfig {
  double tau = 0.07;
  double lambda = 0.5;
  // Anchors without a positive contribute nothing. The only policy.
  enum class EmptyPositive { kSkipAnchor } empty_positive = EmptyPositive::kSkipAnchor;

  void validate() const;  // throws ConfigError
};

/// -sum_i w_i * log softmax(logits_i)[target_i]. Summed, not averaged.
/// Rows with w_i == 0 are skipped and get an exactly zero gradient row.
/// When `grad` is given it receives dLoss/dlogits.
template <typename T>
T token_loss(const nn::Matrix<T>& logits, std::span<const TokenId> targets, std::span<const double> weights,
             nn::Matrix<T>* grad = nullptr);

// The unweighted sum -sum_i log softmax(logits_i)[target_i].
template <typename T>
T token_loss_unweighted(const nn::Matrix<T>& logits, std::span<const TokenId> targets, nn::Matrix<T>* grad = nullptr);

template <typename T>
struct SupConResult {
  T value = 0;
  int anchors = 0;          // anchors with at least one positive
  bool degenerate = false;  // fewer than two embeddings; value is 0
};

/// Character-wise supervised contrastive loss over unit rows of `z`:
///   sum over anchors j with P(j) non-empty of
///   -1/|P(j)| sum_{p in P(j)} log( exp(z_j.z_p/tau) / sum_{a != j} exp(z_j.z_a/tau) )
/// where P(j) holds the other rows sharing j's label. Each anchor's
/// log-sum-exp subtracts that anchor's maximum. `grad` receives dLoss/dz.
template <typename T>
SupConResult<T> supcon_loss(const nn::Matrix<T>& z, std::span<const int> labels, double tau,
                            nn::Matrix<T>* grad = nullptr);

// Graph versions: the returned 1x1 node back-propagates into the input.
template <typename T>
nn::Var<T> token_loss(const nn::Var<T>& logits, std::span<const TokenId> targets, std::span<const double> weights);

template <typename T>
nn::Var<T> supcon_loss(const nn::Var<T>& z, std::span<const int> labels, double tau, SupConResult<T>* info = nullptr);

// One member of a multiview batch as seen by the loss: its logits, target
// ids and weights, and the projected rows at its labelled positions.
template <typename T>
struct MemberOutputs {
  nn::Var<T> logits;
  std::vector<TokenId> targets;
  std::vector<double> weights;
  nn::Var<T> z;             // rows for labelled positions; may be undefined when none
  std::vector<int> labels;  // one per row of z
};

struct LossBreakdown {
  double total = 0;
  double token = 0;   // mean weak token loss over members
  double supcon = 0;  // pooled SupCon before the lambda factor
  int anchors = 0;
  double supcon_per_anchor = 0;
  bool supcon_degenerate = false;
};

/// (1/M) sum_m L_token^m + lambda * L_SupCon over the pooled projections
/// of every member. With `use_supcon` false the contrastive term is left
/// out (and reported as 0). Throws InputError for M = 0.
template <typename T>
nn::Var<T> total_loss(const std::vector<MemberOutputs<T>>& members, const LossConfig& config, bool use_supcon,
                      LossBreakdown* breakdown = nullptr);

struct GradcheckResult {
  double max_rel_error = 0;  // max_i |a_i - n_i| / max(|a|_inf, |n|_inf); 0 when both vanish
  double max_abs_error = 0;
  std::size_t coordinates = 0;
};

/// Central differences of `f` at `x` against the analytic gradient `f`
/// reports through its second argument.
GradcheckResult gradcheck(const std::function<double(const nn::Matrix<double>&, nn::Matrix<double>*)>& f,
                          const nn::Matrix<double>& x, double epsilon = 1e-6);

/// Same for a scalar graph over leaves: `loss` rebuilds the graph from the
/// current values of `inputs`, which are perturbed in place and restored.
GradcheckResult gradcheck(const std::function<nn::Var<double>()>& loss, const std::vector<nn::Var<double>>& inputs,
                          double epsilon = 1e-6);

}  // namespace scob
