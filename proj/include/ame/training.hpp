#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ame/backbone.hpp"
#include "ame/optim.hpp"
#include "ame/prior.hpp"

namespace ame {

enum class KlDirection { forward, reverse };
enum class KlTokens { all_tokens, observed_only };

struct LossConfig {
  double lambda_prior = 0.1;
  double lambda_ortho = 0.01;
  double lambda_max = 1.0;
  KlDirection kl_direction = KlDirection::forward;
  double mask_ratio_lo = 0.15;
  double mask_ratio_hi = 0.5;
  KlTokens apply_kl_to = KlTokens::all_tokens;

  void validate() const {
    if (lambda_prior < 0 || lambda_ortho < 0 || lambda_max < 0)
      fail(ErrorCode::invalid_config, "loss: lambda weights must be >= 0");
    if (!(mask_ratio_lo > 0) || !(mask_ratio_hi < 1) || mask_ratio_lo > mask_ratio_hi)
      fail(ErrorCode::invalid_config, "loss: mask_ratio must satisfy 0 < lo <= hi < 1");
  }
};

// lambda_l = lambda_max * l / (N_L - 1); a single layer receives lambda_max.
std::vector<double> layer_weights(int n_layers, double lambda_max);

// ---- plain (record-level) loss values, used directly and as the reference
// implementation the tape-built losses are tested against ----

double task_loss(const Mat<double>& pred, const Mat<double>& target, const Mat<double>& valid);

// q_per_token entries must be epsilon-smoothed, strictly positive rows.
double prior_alignment_loss(const std::vector<RoutingRecord>& records,
                            const std::vector<std::vector<double>>& q_per_token,
                            const std::vector<double>& lambda, KlDirection dir,
                            const std::vector<char>& token_mask);

struct LayerExpertOutputs {
  std::vector<std::vector<int>> tokens;  // per expert: token ids
  std::vector<Mat<double>> outputs;      // per expert: [m_e x d]
};

double orthogonality_loss(const std::vector<LayerExpertOutputs>& layers, const AnchorMap& map);

// ---- batched tape loss ----

// Per-variate prior inputs for one window. q_smoothed drives the fixed-gate
// path; the remaining fields feed the tape-built gate when it is learnable.
struct VariatePrior {
  std::vector<double> q_smoothed;
  std::vector<double> q_sp;
  double h_mean = 0.0;
  double s_max = 0.0;
};

template <class T>
struct BatchItem {
  PackedInput<T> packed;
  std::vector<VariatePrior> priors;          // per variate; may be empty when unused
  std::vector<double> additive_logit_bias;   // [n x E] rows, empty unless ablation
  std::vector<std::vector<int>> frozen_topk; // per layer, empty unless frozen
};

struct BuiltLoss {
  int total_node = -1;
  int task_node = -1;
  int prior_node = -1;  // -1 when lambda_prior == 0
  int ortho_node = -1;  // -1 when lambda_ortho == 0
  std::vector<std::vector<RoutingRecord>> records;  // per item when captured
};

template <class T>
BuiltLoss build_total_loss(Tape<T>& tape, const ModelState<T>& model,
                           const std::vector<int>& leaves,
                           const std::vector<BatchItem<T>>& batch, const LossConfig& lc,
                           const AnchorMap& map, bool capture_records);

// ---- gradient verification ----

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  int n_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double worst = 0.0;
};

// Central finite differences against tape gradients on a double-precision
// model. Top-k routing decisions are captured at the base point and frozen
// for the perturbed evaluations.
GradCheckReport grad_check(ModelState<double>& model, std::vector<BatchItem<double>>& batch,
                           const LossConfig& lc, const AnchorMap& map, int min_params,
                           double eps, uint64_t seed);

// ---- single optimization step ----

struct StepStats {
  double total = 0.0;
  double task = 0.0;
  double prior = 0.0;
  double ortho = 0.0;
  double grad_norm = 0.0;
  double usage_entropy = 0.0;
};

// Builds the loss, backpropagates, clips, and applies one AdamW update.
// Records are captured when usage statistics are requested.
template <class T>
StepStats train_step(ModelState<T>& model, AdamW<T>& opt, const std::vector<BatchItem<T>>& batch,
                     const LossConfig& lc, const AnchorMap& map, double lr, double clip_norm);

}  // namespace ame

#include "ame/training_impl.hpp"
