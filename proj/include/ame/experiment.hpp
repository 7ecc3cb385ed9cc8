#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ame/backbone.hpp"
#include "ame/metrics.hpp"
#include "ame/optim.hpp"
#include "ame/prior.hpp"
#include "ame/regime_predictor.hpp"
#include "ame/synthetic.hpp"
#include "ame/training.hpp"

namespace ame {

enum class RegimeKind { learned_frozen, analytical_oracle };

struct EvalTaskConfig {
  std::string name;
  std::string path;
  int t_hor = 16;
  int season_m = 0;  // 0: read "m=<p>" from each series' freq tag
  std::vector<int> context_lengths;
};

// Parsed, validated experiment configuration. Unknown JSON keys fail parsing
// with their field path.
struct ExperimentConfig {
  uint64_t seed = 0;
  std::string out_dir;

  std::string train_path;

  BackboneConfig backbone;
  GateParams gate;
  LossConfig loss;
  ModelFamily family = ModelFamily::ame;
  double additive_prior_beta = 0.0;
  int drop_descriptor = -1;

  RegimeKind regime_kind = RegimeKind::learned_frozen;
  std::string predictor_dir;
  int oracle_fit_crops = 2000;
  int oracle_crop_len = 128;

  int64_t steps = 1000;
  int batch_size = 8;
  double lr = 1e-3;
  int64_t warmup_steps = 100;
  bool constant_lr = false;
  double weight_decay = 0.01;
  double clip_norm = 2.0;
  int t_ctx = 96;
  int t_hor = 16;
  int stride = 16;
  int64_t checkpoint_every = 0;
  int64_t log_every = 1;
  std::string resume_dir;

  std::string checkpoint_dir;  // eval / finetune input
  bool eval_seasonal_naive = false;
  std::vector<EvalTaskConfig> tasks;
  bool sweep = false;

  std::string finetune_data;
  int64_t finetune_steps = 2000;
  double finetune_lr = 1e-3;
  int probe_windows = 200;
  int64_t rc_log_every = 200;

  // synth section
  std::optional<SyntheticSpec> synth;

  // train-regime section
  int regime_n_crops = 4000;
  int regime_crop_len = 128;
  RegimePredictorConfig regime_train;

  // analyze section
  std::string probe_file;
  std::string analyze_data;
  std::vector<std::string> analyze_checkpoints;

  std::vector<std::string> ablate_cells;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig parse_experiment_config_text(const std::string& text);

// A trained model plus everything inference/fine-tuning needs: anchor map,
// gate, loss weights, and the frozen regime source.
struct ModelBundle {
  ModelState<float> model;
  AnchorMap anchor;
  GateParams gate;
  LossConfig loss;
  double additive_prior_beta = 0.0;
  int drop_descriptor = -1;
  RegimeKind regime_kind = RegimeKind::learned_frozen;
  RegimePredictor predictor;       // learned-frozen source (also holds qnorm)
  QuantileNormalizer oracle_norm;  // analytical-oracle source
  int64_t step = 0;
  AdamW<float> opt;
  bool has_opt = false;
};

void save_bundle(const std::string& dir, const ModelBundle& bundle, bool include_optimizer);
ModelBundle load_bundle(const std::string& dir);

// Prior inputs for one raw (unstandardized) context slice.
VariatePrior compute_variate_prior(const ModelBundle& bundle, const std::vector<double>& ctx);
RegimeProfile bundle_profile(const ModelBundle& bundle, const std::vector<double>& ctx);

// Inference-style capture over one window (horizon masked, no context
// masking): routing records per layer plus final encoder representations.
struct CaptureResult {
  std::vector<RoutingRecord> records;
  Mat<float> final_tokens;
  std::vector<int> token_variate;
  std::vector<char> token_pad;
};
CaptureResult capture_routing(const ModelBundle& bundle, const Window& w);

// ---- pipeline entry points (shared by the C API and the CLI) ----

// Returns a small JSON result string for reporting; artifacts are written
// under cfg.out_dir.
std::string run_synth(const ExperimentConfig& cfg);
std::string run_profile(const std::string& dataset_path, const std::string& out_dir);
std::string run_train_regime(const ExperimentConfig& cfg);
std::string run_train(const ExperimentConfig& cfg);
std::string run_eval(const ExperimentConfig& cfg);
std::string run_finetune(const ExperimentConfig& cfg);
std::string run_analyze(const ExperimentConfig& cfg);
std::string run_ablate(const ExperimentConfig& cfg);

// Worker cap for data-prep parallelism; reads AME_THREADS (>=1).
int worker_threads();

}  // namespace ame
