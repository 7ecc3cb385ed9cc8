#include "ame/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <thread>
#include <unordered_map>

#include "ame/checkpoint.hpp"

namespace ame {

namespace fs = std::filesystem;
using nlohmann::json;

int worker_threads() {
  const char* env = std::getenv("AME_THREADS");
  if (!env) return int(std::max(1u, std::min(4u, std::thread::hardware_concurrency())));
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

// ---------------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------------

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& path) {
  if (!j.is_object()) fail(ErrorCode::invalid_config, "config: " + path + " must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok)
      fail(ErrorCode::invalid_config, "config: unknown key '" + path + "." + item.key() + "'");
  }
}

int descriptor_index(const std::string& name) {
  for (int d = 0; d < kNumDescriptors; ++d)
    if (name == kDescriptorNames[size_t(d)]) return d;
  fail(ErrorCode::invalid_config, "config: unknown descriptor '" + name + "'");
}

void apply_preset(BackboneConfig& b, const std::string& preset) {
  // desk-scale presets; dimensions are reduced relative to any production
  // configuration and documented as such in the README
  if (preset == "tiny") {
    b.d_model = 32;
    b.n_layers = 2;
    b.n_heads = 4;
    b.experts_total = 5;
    b.experts_shared = 1;
    b.top_k = 2;
    b.patch_len = 16;
    b.max_tokens = 512;
    b.expert_hidden = 64;
  } else if (preset == "small") {
    b.d_model = 64;
    b.n_layers = 3;
    b.n_heads = 4;
    b.experts_total = 10;
    b.experts_shared = 2;
    b.top_k = 2;
    b.patch_len = 16;
    b.max_tokens = 512;
    b.expert_hidden = 128;
  } else {
    fail(ErrorCode::invalid_config, "config: unknown preset '" + preset + "'");
  }
}

RegimeMix parse_mix(const json& j, const std::string& path) {
  check_keys(j, {"seasonal", "trend", "sparse", "noise", "composite"}, path);
  RegimeMix m;
  m.seasonal = j.value("seasonal", 0.0);
  m.trend = j.value("trend", 0.0);
  m.sparse = j.value("sparse", 0.0);
  m.noise = j.value("noise", 0.0);
  m.composite = j.value("composite", 0.0);
  return m;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j) {
  check_keys(j,
             {"seed", "out", "data", "model", "experts", "gate", "loss", "regime", "train",
              "ablation", "eval", "finetune", "synth", "regime_train", "analyze", "ablate"},
             "");
  ExperimentConfig cfg;
  cfg.seed = j.value("seed", uint64_t(0));
  cfg.out_dir = j.value("out", "");

  if (j.contains("data")) {
    check_keys(j.at("data"), {"train"}, "data");
    cfg.train_path = j.at("data").value("train", "");
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m,
               {"preset", "d_model", "n_layers", "n_heads", "top_k", "patch_len", "max_tokens",
                "expert_hidden"},
               "model");
    if (m.contains("preset")) apply_preset(cfg.backbone, m.at("preset").get<std::string>());
    cfg.backbone.d_model = m.value("d_model", cfg.backbone.d_model);
    cfg.backbone.n_layers = m.value("n_layers", cfg.backbone.n_layers);
    cfg.backbone.n_heads = m.value("n_heads", cfg.backbone.n_heads);
    cfg.backbone.top_k = m.value("top_k", cfg.backbone.top_k);
    cfg.backbone.patch_len = m.value("patch_len", cfg.backbone.patch_len);
    cfg.backbone.max_tokens = m.value("max_tokens", cfg.backbone.max_tokens);
    cfg.backbone.expert_hidden = m.value("expert_hidden", cfg.backbone.expert_hidden);
  }
  if (j.contains("experts")) {
    check_keys(j.at("experts"), {"total", "shared"}, "experts");
    cfg.backbone.experts_total = j.at("experts").value("total", cfg.backbone.experts_total);
    cfg.backbone.experts_shared = j.at("experts").value("shared", cfg.backbone.experts_shared);
  }
  if (j.contains("gate")) {
    check_keys(j.at("gate"), {"alpha", "beta_b", "learnable"}, "gate");
    cfg.gate.alpha = j.at("gate").value("alpha", cfg.gate.alpha);
    cfg.gate.b = j.at("gate").value("beta_b", cfg.gate.b);
    cfg.gate.learnable = j.at("gate").value("learnable", cfg.gate.learnable);
    if (!(cfg.gate.alpha > 0.0) || !std::isfinite(cfg.gate.alpha))
      fail(ErrorCode::invalid_config, "config: gate.alpha must be finite and positive");
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    check_keys(l,
               {"lambda_prior", "lambda_ortho", "lambda_max", "kl_direction", "mask_ratio",
                "apply_kl_to"},
               "loss");
    cfg.loss.lambda_prior = l.value("lambda_prior", cfg.loss.lambda_prior);
    cfg.loss.lambda_ortho = l.value("lambda_ortho", cfg.loss.lambda_ortho);
    cfg.loss.lambda_max = l.value("lambda_max", cfg.loss.lambda_max);
    if (l.contains("kl_direction")) {
      const std::string d = l.at("kl_direction").get<std::string>();
      if (d == "forward") {
        cfg.loss.kl_direction = KlDirection::forward;
      } else if (d == "reverse") {
        cfg.loss.kl_direction = KlDirection::reverse;
      } else {
        fail(ErrorCode::invalid_config, "config: loss.kl_direction must be forward|reverse");
      }
    }
    if (l.contains("mask_ratio")) {
      const auto mr = l.at("mask_ratio").get<std::vector<double>>();
      if (mr.size() != 2)
        fail(ErrorCode::invalid_config, "config: loss.mask_ratio must be [low, high]");
      cfg.loss.mask_ratio_lo = mr[0];
      cfg.loss.mask_ratio_hi = mr[1];
    }
    if (l.contains("apply_kl_to")) {
      const std::string a = l.at("apply_kl_to").get<std::string>();
      if (a == "all-tokens") {
        cfg.loss.apply_kl_to = KlTokens::all_tokens;
      } else if (a == "observed-only") {
        cfg.loss.apply_kl_to = KlTokens::observed_only;
      } else {
        fail(ErrorCode::invalid_config, "config: loss.apply_kl_to must be all-tokens|observed-only");
      }
    }
    cfg.loss.validate();
  }
  if (j.contains("regime")) {
    const json& r = j.at("regime");
    check_keys(r, {"source", "predictor", "oracle_fit_crops", "crop_len"}, "regime");
    if (r.contains("source")) {
      const std::string s = r.at("source").get<std::string>();
      if (s == "learned-frozen") {
        cfg.regime_kind = RegimeKind::learned_frozen;
      } else if (s == "analytical-oracle") {
        cfg.regime_kind = RegimeKind::analytical_oracle;
      } else {
        fail(ErrorCode::invalid_config,
             "config: regime.source must be learned-frozen|analytical-oracle");
      }
    }
    cfg.predictor_dir = r.value("predictor", "");
    cfg.oracle_fit_crops = r.value("oracle_fit_crops", cfg.oracle_fit_crops);
    cfg.oracle_crop_len = r.value("crop_len", cfg.oracle_crop_len);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"steps", "batch_size", "lr", "warmup_steps", "schedule", "weight_decay",
                "clip_norm", "t_ctx", "t_hor", "stride", "checkpoint_every", "log_every",
                "resume"},
               "train");
    cfg.steps = t.value("steps", cfg.steps);
    cfg.batch_size = t.value("batch_size", cfg.batch_size);
    cfg.lr = t.value("lr", cfg.lr);
    cfg.warmup_steps = t.value("warmup_steps", cfg.warmup_steps);
    if (t.contains("schedule")) {
      const std::string s = t.at("schedule").get<std::string>();
      if (s == "linear") {
        cfg.constant_lr = false;
      } else if (s == "constant") {
        cfg.constant_lr = true;
      } else {
        fail(ErrorCode::invalid_config, "config: train.schedule must be linear|constant");
      }
    }
    cfg.weight_decay = t.value("weight_decay", cfg.weight_decay);
    cfg.clip_norm = t.value("clip_norm", cfg.clip_norm);
    cfg.t_ctx = t.value("t_ctx", cfg.t_ctx);
    cfg.t_hor = t.value("t_hor", cfg.t_hor);
    cfg.stride = t.value("stride", cfg.stride);
    cfg.checkpoint_every = t.value("checkpoint_every", cfg.checkpoint_every);
    cfg.log_every = t.value("log_every", cfg.log_every);
    cfg.resume_dir = t.value("resume", "");
  }
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    check_keys(a, {"family", "additive_prior_beta", "drop_descriptor"}, "ablation");
    if (a.contains("family")) cfg.family = family_from_name(a.at("family").get<std::string>());
    cfg.additive_prior_beta = a.value("additive_prior_beta", 0.0);
    if (a.contains("drop_descriptor") && !a.at("drop_descriptor").is_null())
      cfg.drop_descriptor = descriptor_index(a.at("drop_descriptor").get<std::string>());
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"checkpoint", "seasonal_naive", "tasks", "sweep"}, "eval");
    cfg.checkpoint_dir = e.value("checkpoint", "");
    cfg.eval_seasonal_naive = e.value("seasonal_naive", false);
    cfg.sweep = e.value("sweep", false);
    if (e.contains("tasks")) {
      for (const json& tj : e.at("tasks")) {
        check_keys(tj, {"name", "path", "t_hor", "season_m", "context_lengths"}, "eval.tasks[]");
        EvalTaskConfig task;
        task.name = tj.at("name").get<std::string>();
        task.path = tj.at("path").get<std::string>();
        task.t_hor = tj.value("t_hor", 16);
        if (tj.contains("season_m") && tj.at("season_m").is_number())
          task.season_m = tj.at("season_m").get<int>();
        if (tj.contains("context_lengths"))
          task.context_lengths = tj.at("context_lengths").get<std::vector<int>>();
        cfg.tasks.push_back(std::move(task));
      }
    }
  }
  if (j.contains("finetune")) {
    const json& f = j.at("finetune");
    check_keys(f, {"checkpoint", "data", "steps", "lr", "probe_windows", "rc_log_every"},
               "finetune");
    if (f.contains("checkpoint")) cfg.checkpoint_dir = f.at("checkpoint").get<std::string>();
    cfg.finetune_data = f.value("data", "");
    cfg.finetune_steps = f.value("steps", cfg.finetune_steps);
    cfg.finetune_lr = f.value("lr", cfg.finetune_lr);
    cfg.probe_windows = f.value("probe_windows", cfg.probe_windows);
    cfg.rc_log_every = f.value("rc_log_every", cfg.rc_log_every);
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    check_keys(s, {"count", "length", "noise_level", "regime_mix"}, "synth");
    SyntheticSpec spec;
    spec.count = s.value("count", int64_t(1));
    spec.length = s.value("length", int64_t(256));
    spec.noise_level = s.value("noise_level", 0.5);
    spec.seed = cfg.seed;
    if (s.contains("regime_mix")) spec.regime_mix = parse_mix(s.at("regime_mix"), "synth.regime_mix");
    cfg.synth = spec;
  }
  if (j.contains("regime_train")) {
    const json& r = j.at("regime_train");
    check_keys(r, {"n_crops", "crop_len", "lr", "batch_size", "max_epochs", "patience"},
               "regime_train");
    cfg.regime_n_crops = r.value("n_crops", cfg.regime_n_crops);
    cfg.regime_crop_len = r.value("crop_len", cfg.regime_crop_len);
    cfg.regime_train.lr = r.value("lr", cfg.regime_train.lr);
    cfg.regime_train.batch_size = r.value("batch_size", cfg.regime_train.batch_size);
    cfg.regime_train.max_epochs = r.value("max_epochs", cfg.regime_train.max_epochs);
    cfg.regime_train.patience = r.value("patience", cfg.regime_train.patience);
  }
  if (j.contains("analyze")) {
    const json& a = j.at("analyze");
    check_keys(a, {"probe", "data", "checkpoints"}, "analyze");
    cfg.probe_file = a.value("probe", "");
    cfg.analyze_data = a.value("data", "");
    if (a.contains("checkpoints"))
      cfg.analyze_checkpoints = a.at("checkpoints").get<std::vector<std::string>>();
  }
  if (j.contains("ablate")) {
    const json& a = j.at("ablate");
    check_keys(a, {"cells"}, "ablate");
    if (a.contains("cells")) cfg.ablate_cells = a.at("cells").get<std::vector<std::string>>();
  }

  // cross-field rules
  if (cfg.family != ModelFamily::ame) {
    cfg.loss.lambda_prior = 0.0;
    cfg.loss.lambda_ortho = 0.0;
    if (cfg.additive_prior_beta != 0.0)
      fail(ErrorCode::invalid_config, "config: additive prior requires the ame family");
  }
  if (cfg.additive_prior_beta != 0.0 && cfg.gate.learnable)
    fail(ErrorCode::invalid_config,
         "config: additive prior and learnable gate cannot be combined");
  return cfg;
}

ExperimentConfig parse_experiment_config_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::parse, "config: invalid JSON");
  return parse_experiment_config(j);
}

// ---------------------------------------------------------------------------
// bundle persistence
// ---------------------------------------------------------------------------

namespace {

json backbone_to_json(const BackboneConfig& b) {
  return json{{"d_model", b.d_model},         {"n_layers", b.n_layers},
              {"n_heads", b.n_heads},         {"experts_total", b.experts_total},
              {"experts_shared", b.experts_shared}, {"top_k", b.top_k},
              {"patch_len", b.patch_len},     {"max_tokens", b.max_tokens},
              {"expert_hidden", b.expert_hidden}};
}

BackboneConfig backbone_from_json(const json& j) {
  BackboneConfig b;
  b.d_model = j.at("d_model").get<int>();
  b.n_layers = j.at("n_layers").get<int>();
  b.n_heads = j.at("n_heads").get<int>();
  b.experts_total = j.at("experts_total").get<int>();
  b.experts_shared = j.at("experts_shared").get<int>();
  b.top_k = j.at("top_k").get<int>();
  b.patch_len = j.at("patch_len").get<int>();
  b.max_tokens = j.at("max_tokens").get<int>();
  b.expert_hidden = j.at("expert_hidden").get<int>();
  return b;
}

}  // namespace

void save_bundle(const std::string& dir, const ModelBundle& bundle, bool include_optimizer) {
  CheckpointData ck;
  ck.step = bundle.step;
  json cfg;
  cfg["kind"] = "model";
  cfg["family"] = family_name(bundle.model.family);
  cfg["backbone"] = backbone_to_json(bundle.model.cfg);
  cfg["gate"] = {{"alpha", bundle.gate.alpha}, {"beta_b", bundle.gate.b},
                 {"learnable", bundle.gate.learnable}};
  cfg["loss"] = {{"lambda_prior", bundle.loss.lambda_prior},
                 {"lambda_ortho", bundle.loss.lambda_ortho},
                 {"lambda_max", bundle.loss.lambda_max},
                 {"kl_direction",
                  bundle.loss.kl_direction == KlDirection::forward ? "forward" : "reverse"},
                 {"mask_ratio", {bundle.loss.mask_ratio_lo, bundle.loss.mask_ratio_hi}},
                 {"apply_kl_to", bundle.loss.apply_kl_to == KlTokens::all_tokens
                                     ? "all-tokens"
                                     : "observed-only"}};
  cfg["additive_prior_beta"] = bundle.additive_prior_beta;
  cfg["drop_descriptor"] = bundle.drop_descriptor;
  cfg["regime_kind"] =
      bundle.regime_kind == RegimeKind::learned_frozen ? "learned-frozen" : "analytical-oracle";
  if (bundle.regime_kind == RegimeKind::learned_frozen) {
    cfg["regime_features"] = {{"l_cap", bundle.predictor.feat.l_cap},
                              {"n_points", bundle.predictor.feat.n_points},
                              {"n_spec_bins", bundle.predictor.feat.n_spec_bins}};
  }
  cfg["has_opt"] = include_optimizer && bundle.has_opt;
  cfg["opt_t"] = bundle.opt.t;

  for (const auto& entry : bundle.model.params.entries)
    ck.arrays.push_back(to_record(entry.name, entry.value));
  if (include_optimizer && bundle.has_opt) {
    for (size_t i = 0; i < bundle.model.params.size(); ++i) {
      ck.arrays.push_back(to_record("opt.m." + bundle.model.params.entries[i].name,
                                    bundle.opt.m[i]));
      ck.arrays.push_back(to_record("opt.v." + bundle.model.params.entries[i].name,
                                    bundle.opt.v[i]));
    }
  }
  if (bundle.regime_kind == RegimeKind::learned_frozen) {
    bundle.predictor.append_arrays(ck.arrays);
  } else {
    for (int d = 0; d < 4; ++d) {
      ArrayRecord r;
      r.name = "regime.qnorm." + std::to_string(d);
      r.dtype = "f64";
      r.f64 = bundle.oracle_norm.reference(d);
      r.shape = {int64_t(r.f64.size()), 1};
      ck.arrays.push_back(std::move(r));
    }
  }
  ck.config = std::move(cfg);
  save_checkpoint(dir, ck);
}

ModelBundle load_bundle(const std::string& dir) {
  const CheckpointData ck = load_checkpoint(dir);
  if (ck.config.value("kind", "") != "model")
    fail(ErrorCode::parse, "checkpoint: not a model bundle: " + dir);
  ModelBundle b;
  b.step = ck.step;
  const BackboneConfig cfg = backbone_from_json(ck.config.at("backbone"));
  const ModelFamily family = family_from_name(ck.config.at("family").get<std::string>());
  b.gate.alpha = ck.config.at("gate").at("alpha").get<double>();
  b.gate.b = ck.config.at("gate").at("beta_b").get<double>();
  b.gate.learnable = ck.config.at("gate").at("learnable").get<bool>();
  const json& lj = ck.config.at("loss");
  b.loss.lambda_prior = lj.at("lambda_prior").get<double>();
  b.loss.lambda_ortho = lj.at("lambda_ortho").get<double>();
  b.loss.lambda_max = lj.at("lambda_max").get<double>();
  b.loss.kl_direction = lj.at("kl_direction").get<std::string>() == "forward"
                            ? KlDirection::forward
                            : KlDirection::reverse;
  b.loss.mask_ratio_lo = lj.at("mask_ratio")[0].get<double>();
  b.loss.mask_ratio_hi = lj.at("mask_ratio")[1].get<double>();
  b.loss.apply_kl_to = lj.at("apply_kl_to").get<std::string>() == "all-tokens"
                           ? KlTokens::all_tokens
                           : KlTokens::observed_only;
  b.additive_prior_beta = ck.config.value("additive_prior_beta", 0.0);
  b.drop_descriptor = ck.config.value("drop_descriptor", -1);
  b.regime_kind = ck.config.at("regime_kind").get<std::string>() == "learned-frozen"
                      ? RegimeKind::learned_frozen
                      : RegimeKind::analytical_oracle;

  b.model.build(family, cfg, b.gate.learnable && family == ModelFamily::ame, b.gate.alpha,
                b.gate.b);
  b.anchor = build_anchor_map(cfg.n_specialized(), cfg.experts_shared);
  for (auto& entry : b.model.params.entries) {
    const ArrayRecord* r = ck.find(entry.name);
    if (!r) fail(ErrorCode::shape_mismatch, "checkpoint: missing parameter " + entry.name);
    Mat<float> m = record_to_mat<float>(*r);
    if (!m.same_shape(entry.value))
      fail(ErrorCode::shape_mismatch, "checkpoint: shape mismatch for " + entry.name);
    entry.value = std::move(m);
  }
  if (ck.config.value("has_opt", false)) {
    b.opt.t = ck.config.value("opt_t", int64_t(0));
    b.opt.m.clear();
    b.opt.v.clear();
    for (const auto& entry : b.model.params.entries) {
      const ArrayRecord* rm = ck.find("opt.m." + entry.name);
      const ArrayRecord* rv = ck.find("opt.v." + entry.name);
      if (!rm || !rv) fail(ErrorCode::shape_mismatch, "checkpoint: missing optimizer state");
      b.opt.m.push_back(record_to_mat<float>(*rm));
      b.opt.v.push_back(record_to_mat<float>(*rv));
    }
    b.has_opt = true;
  }
  if (b.regime_kind == RegimeKind::learned_frozen) {
    if (!RegimePredictor::present_in(ck))
      fail(ErrorCode::parse, "checkpoint: missing regime predictor arrays");
    b.predictor = RegimePredictor::from_checkpoint(ck);
  } else {
    for (int d = 0; d < 4; ++d) {
      const ArrayRecord* r = ck.find("regime.qnorm." + std::to_string(d));
      if (!r) fail(ErrorCode::parse, "checkpoint: missing quantile reference");
      b.oracle_norm.set_reference(d, r->f64);
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// priors and capture
// ---------------------------------------------------------------------------

namespace {

GateParams effective_gate(const ModelBundle& b) {
  GateParams g = b.gate;
  if (b.model.gate_alpha >= 0) {
    g.alpha = double(b.model.params[b.model.gate_alpha](0, 0));
    g.b = double(b.model.params[b.model.gate_b](0, 0));
  }
  return g;
}

VariatePrior prior_from_profile(const ModelBundle& b, const RegimeProfile& profile) {
  VariatePrior vp;
  const GateParams gate = effective_gate(b);
  const ExpertPrior prior = expert_prior(profile, b.anchor, gate, b.drop_descriptor);
  vp.q_smoothed = smooth_prior(prior.probs);
  vp.q_sp = specialized_prior(profile, b.anchor, b.drop_descriptor);
  double s = 0.0, h = 0.0;
  int n = 0;
  for (int d = 0; d < kNumDescriptors; ++d) {
    if (d == b.drop_descriptor) continue;
    s = std::max(s, profile[d]);
    h += binary_entropy_bits(profile[d]);
    ++n;
  }
  vp.s_max = s;
  vp.h_mean = n > 0 ? h / double(n) : 0.0;
  return vp;
}

}  // namespace

RegimeProfile bundle_profile(const ModelBundle& b, const std::vector<double>& ctx) {
  if (b.regime_kind == RegimeKind::learned_frozen) return b.predictor.predict(ctx);
  return b.oracle_norm.apply(structural_profile(ctx));
}

VariatePrior compute_variate_prior(const ModelBundle& b, const std::vector<double>& ctx) {
  return prior_from_profile(b, bundle_profile(b, ctx));
}

CaptureResult capture_routing(const ModelBundle& bundle, const Window& w) {
  auto [wn, stats] = standardize_window(w);
  const auto packed = pack_window<float>(wn, bundle.model.cfg, {});
  Tape<float> tape;
  const auto leaves = make_param_leaves(tape, bundle.model, false);
  ForwardOptions opts;
  opts.capture = true;
  std::vector<double> bias;
  if (bundle.additive_prior_beta != 0.0 && bundle.model.family == ModelFamily::ame) {
    const int e = bundle.model.cfg.experts_total;
    bias.assign(size_t(packed.n_tokens) * size_t(e), 0.0);
    std::vector<VariatePrior> vps;
    for (const auto& ctx : w.context) vps.push_back(compute_variate_prior(bundle, ctx));
    for (int t = 0; t < packed.n_tokens; ++t) {
      const auto& q = vps[size_t(packed.variate_ids[size_t(t)])].q_smoothed;
      for (int x = 0; x < e; ++x)
        bias[size_t(t) * size_t(e) + size_t(x)] =
            bundle.additive_prior_beta * std::log(q[size_t(x)]);
    }
    opts.additive_logit_bias = &bias;
  }
  CaptureResult out;
  const auto fwd = encoder_forward(tape, bundle.model, leaves, packed, opts, &out.records);
  out.final_tokens = tape.val(fwd.tokens_node);
  out.token_variate = packed.variate_ids;
  out.token_pad.assign(packed.pad_token.begin(), packed.pad_token.end());
  return out;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

namespace {

struct WindowRef {
  int series;
  int64_t offset;
};

std::vector<WindowRef> build_pool(const Dataset& ds, int t_ctx, int t_hor, int stride) {
  std::vector<WindowRef> pool;
  for (size_t i = 0; i < ds.size(); ++i) {
    const int64_t len = int64_t(ds[i].length());
    for (int64_t off = 0; off + t_ctx + t_hor <= len; off += stride)
      pool.push_back({int(i), off});
  }
  return pool;
}

// Cache of per-(series, offset) regime profiles; gate-dependent parts are
// recomputed on every use so a learnable gate sees fresh parameters.
struct ProfileCache {
  std::unordered_map<uint64_t, std::vector<RegimeProfile>> map;

  const std::vector<RegimeProfile>& get(const ModelBundle& bundle, const Dataset& ds,
                                        const WindowRef& ref, int t_ctx) {
    const uint64_t key = (uint64_t(uint32_t(ref.series)) << 32) ^ uint64_t(ref.offset);
    auto it = map.find(key);
    if (it != map.end()) return it->second;
    std::vector<RegimeProfile> profiles;
    const Series& s = ds[size_t(ref.series)];
    for (const auto& var : s.variates) {
      std::vector<double> ctx(var.begin() + ref.offset, var.begin() + ref.offset + t_ctx);
      profiles.push_back(bundle_profile(bundle, ctx));
    }
    return map.emplace(key, std::move(profiles)).first->second;
  }
};

std::vector<char> sample_mask_plan(int n_ctx_tokens, const LossConfig& lc, Rng& rng) {
  const int n = n_ctx_tokens;
  std::vector<char> plan(size_t(n), 0);
  if (n <= 0) return plan;
  const double u = rng.uniform(lc.mask_ratio_lo, lc.mask_ratio_hi);
  const int cmin = int(std::ceil(lc.mask_ratio_lo * n - 1e-9));
  const int cmax = int(std::floor(lc.mask_ratio_hi * n + 1e-9));
  int count = int(std::lround(u * n));
  if (cmin <= cmax) count = std::clamp(count, cmin, cmax);
  count = std::clamp(count, 0, n);
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
  for (int i = 0; i < count; ++i) {
    const int j = int(rng.uniform_int(i, n - 1));
    std::swap(idx[size_t(i)], idx[size_t(j)]);
    plan[size_t(idx[size_t(i)])] = 1;
  }
  return plan;
}

BatchItem<float> make_item(const ModelBundle& bundle, const Dataset& ds, const WindowRef& ref,
                           int t_ctx, int t_hor, Rng& mask_rng, ProfileCache& cache) {
  const Window w = window_at(ds[size_t(ref.series)], ref.offset, t_ctx, t_hor);
  auto [wn, stats] = standardize_window(w);
  const int p = bundle.model.cfg.patch_len;
  const int ctx_p = (t_ctx + p - 1) / p;
  const int n_var = int(w.n_variates());
  const auto plan = sample_mask_plan(n_var * ctx_p, bundle.loss, mask_rng);

  BatchItem<float> item;
  item.packed = pack_window<float>(wn, bundle.model.cfg, plan);
  const bool needs_prior =
      bundle.model.family == ModelFamily::ame &&
      (bundle.loss.lambda_prior > 0.0 || bundle.additive_prior_beta != 0.0 ||
       bundle.model.gate_alpha >= 0);
  if (needs_prior) {
    const auto& profiles = cache.get(bundle, ds, ref, t_ctx);
    for (const auto& profile : profiles)
      item.priors.push_back(prior_from_profile(bundle, profile));
    if (bundle.additive_prior_beta != 0.0) {
      const int e = bundle.model.cfg.experts_total;
      item.additive_logit_bias.assign(size_t(item.packed.n_tokens) * size_t(e), 0.0);
      for (int t = 0; t < item.packed.n_tokens; ++t) {
        const auto& q = item.priors[size_t(item.packed.variate_ids[size_t(t)])].q_smoothed;
        for (int x = 0; x < e; ++x)
          item.additive_logit_bias[size_t(t) * size_t(e) + size_t(x)] =
              bundle.additive_prior_beta * std::log(q[size_t(x)]);
      }
    }
  }
  return item;
}

struct LoopHooks {
  std::function<void(int64_t step, const StepStats&)> on_step;
};

void training_loop(ModelBundle& bundle, const Dataset& ds, uint64_t seed, int64_t n_steps,
                   int batch_size, double peak_lr, int64_t warmup, bool constant_lr,
                   double weight_decay, double clip_norm, int t_ctx, int t_hor, int stride,
                   const std::string& log_path, int64_t log_every, const LoopHooks& hooks) {
  const auto pool = build_pool(ds, t_ctx, t_hor, stride);
  if (pool.empty())
    fail(ErrorCode::invalid_argument, "train: no series admits t_ctx + t_hor window");

  if (!bundle.has_opt) {
    std::vector<Mat<float>> init_params;
    for (const auto& e : bundle.model.params.entries) init_params.push_back(e.value);
    bundle.opt.init(init_params);
    bundle.has_opt = true;
  }
  bundle.opt.weight_decay = weight_decay;

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::app);
    if (!log) fail(ErrorCode::io, "train: cannot open log " + log_path);
  }

  ProfileCache cache;
  const int64_t start = bundle.step;
  const int64_t total = start + n_steps;
  for (int64_t step = start; step < total; ++step) {
    Rng batch_rng = Rng::stream(seed, "batch", uint64_t(step));
    Rng mask_rng = Rng::stream(seed, "mask", uint64_t(step));
    std::vector<BatchItem<float>> batch;
    batch.reserve(size_t(batch_size));
    for (int i = 0; i < batch_size; ++i) {
      const auto& ref = pool[size_t(batch_rng.uniform_int(0, int64_t(pool.size()) - 1))];
      batch.push_back(make_item(bundle, ds, ref, t_ctx, t_hor, mask_rng, cache));
    }
    const double lr = lr_at_step(peak_lr, step, warmup, total, constant_lr);
    const StepStats stats =
        train_step(bundle.model, bundle.opt, batch, bundle.loss, bundle.anchor, lr, clip_norm);
    bundle.step = step + 1;
    if (log.is_open() && (step % std::max<int64_t>(1, log_every) == 0 || step + 1 == total)) {
      json line = {{"step", step},
                   {"l_task", stats.task},
                   {"l_prior", stats.prior},
                   {"l_ortho", stats.ortho},
                   {"grad_norm", stats.grad_norm},
                   {"expert_usage_entropy", stats.usage_entropy}};
      log << line.dump() << "\n";
    }
    if (hooks.on_step) hooks.on_step(step + 1, stats);
  }
}

ModelBundle build_fresh_bundle(const ExperimentConfig& cfg) {
  if (cfg.backbone.n_layers < 1)
    fail(ErrorCode::invalid_config, "config: experiments require n_layers >= 1");
  cfg.backbone.validate();
  // realized mask counts must be able to land inside the configured range
  {
    const int n1 = (cfg.t_ctx + cfg.backbone.patch_len - 1) / cfg.backbone.patch_len;
    const int cmin = int(std::ceil(cfg.loss.mask_ratio_lo * n1 - 1e-9));
    const int cmax = int(std::floor(cfg.loss.mask_ratio_hi * n1 + 1e-9));
    if (cmin > cmax)
      fail(ErrorCode::invalid_config,
           "config: mask_ratio range admits no integer mask count for " + std::to_string(n1) +
               " context tokens");
  }
  if (cfg.t_ctx < 8) fail(ErrorCode::invalid_config, "config: train.t_ctx must be >= 8");

  ModelBundle b;
  b.gate = cfg.gate;
  b.loss = cfg.loss;
  b.additive_prior_beta = cfg.additive_prior_beta;
  b.drop_descriptor = cfg.drop_descriptor;
  b.anchor = build_anchor_map(cfg.backbone.n_specialized(), cfg.backbone.experts_shared);
  b.model.build(cfg.family, cfg.backbone,
                cfg.gate.learnable && cfg.family == ModelFamily::ame, cfg.gate.alpha, cfg.gate.b);
  b.model.init_params(cfg.seed);

  b.regime_kind = cfg.regime_kind;
  const bool needs_regime = cfg.family == ModelFamily::ame;
  if (needs_regime) {
    if (cfg.regime_kind == RegimeKind::learned_frozen) {
      if (cfg.predictor_dir.empty())
        fail(ErrorCode::invalid_config, "config: regime.predictor is required for learned-frozen");
      const CheckpointData ck = load_checkpoint(cfg.predictor_dir);
      if (!RegimePredictor::present_in(ck))
        fail(ErrorCode::parse, "config: no regime predictor in " + cfg.predictor_dir);
      b.predictor = RegimePredictor::from_checkpoint(ck);
    } else {
      // fit the oracle quantile normalizer on crops from the training pool
      const Dataset ds = load_dataset(cfg.train_path);
      const LabelTable table =
          build_label_table(ds, cfg.oracle_fit_crops, cfg.oracle_crop_len, cfg.seed ^ 0x5eedull);
      b.oracle_norm = table.normalizer;
    }
  } else {
    // keep a trivial oracle normalizer so the bundle stays self-contained
    b.regime_kind = RegimeKind::analytical_oracle;
    std::vector<RegimeProfile> dummy(2);
    dummy[1].r_f = dummy[1].r_s = dummy[1].r_t = dummy[1].r_sp = 1.0;
    b.oracle_norm = QuantileNormalizer::fit(dummy);
  }
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// pipelines
// ---------------------------------------------------------------------------

std::string run_synth(const ExperimentConfig& cfg) {
  if (!cfg.synth) fail(ErrorCode::invalid_config, "synth: missing synth section");
  if (cfg.out_dir.empty()) fail(ErrorCode::invalid_config, "synth: missing out dir");
  fs::create_directories(cfg.out_dir);
  const SyntheticResult result = gen_synthetic(*cfg.synth);
  const std::string path = (fs::path(cfg.out_dir) / "data.jsonl").string();
  save_dataset(result.data, path);
  json out = {{"count", result.data.size()}, {"path", path}};
  return out.dump(2);
}

std::string run_profile(const std::string& dataset_path, const std::string& out_dir) {
  const Dataset ds = load_dataset(dataset_path);
  std::vector<RegimeProfile> profiles(ds.size());
  const int n_threads = std::min<int>(worker_threads(), int(ds.size()));
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= ds.size()) return;
      RegimeProfile acc;
      for (const auto& var : ds[i].variates) {
        const RegimeProfile p = structural_profile(var);
        for (int d = 0; d < 4; ++d) acc[d] += p[d];
      }
      for (int d = 0; d < 4; ++d) acc[d] /= double(ds[i].n_variates());
      profiles[i] = acc;
    }
  };
  std::vector<std::thread> threads;
  for (int t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  json corr_json;
  try {
    const auto corr = descriptor_correlation(profiles);
    corr_json = json::array();
    for (int a = 0; a < 4; ++a) {
      json row = json::array();
      for (int b = 0; b < 4; ++b) row.push_back(corr[size_t(a)][size_t(b)]);
      corr_json.push_back(row);
    }
  } catch (const Error&) {
    corr_json = nullptr;  // degenerate sample; per-series profiles still emitted
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream out((fs::path(out_dir) / "profiles.jsonl").string());
    for (size_t i = 0; i < ds.size(); ++i) {
      json line = {{"id", ds[i].id},
                   {"r_f", profiles[i].r_f},
                   {"r_s", profiles[i].r_s},
                   {"r_t", profiles[i].r_t},
                   {"r_sp", profiles[i].r_sp}};
      out << line.dump() << "\n";
    }
    std::ofstream corr_out((fs::path(out_dir) / "correlation.json").string());
    corr_out << corr_json.dump(2) << "\n";
  }
  json result = {{"n_series", ds.size()}, {"correlation", corr_json}};
  return result.dump(2);
}

std::string run_train_regime(const ExperimentConfig& cfg) {
  if (cfg.train_path.empty()) fail(ErrorCode::invalid_config, "train-regime: missing data.train");
  if (cfg.out_dir.empty()) fail(ErrorCode::invalid_config, "train-regime: missing out dir");
  const Dataset ds = load_dataset(cfg.train_path);
  const LabelTable table = build_label_table(ds, cfg.regime_n_crops, cfg.regime_crop_len, cfg.seed);
  RegimePredictorConfig rc = cfg.regime_train;
  rc.seed = cfg.seed;
  RegimeTrainStats stats;
  const RegimePredictor predictor = train_regime_predictor(table, rc, &stats);

  // held-out rank agreement with the analytical targets
  Rng split_rng = Rng::stream(cfg.seed, "regime-split");
  std::vector<int> order(table.crops.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  split_rng.shuffle(order);
  const size_t n_val = std::max<size_t>(1, size_t(rc.val_fraction * double(order.size())));
  json rho = json::array();
  for (int d = 0; d < 4; ++d) {
    std::vector<double> pred, tgt;
    for (size_t i = 0; i < n_val; ++i) {
      const auto& crop = table.crops[size_t(order[i])];
      pred.push_back(predictor.predict(crop.values)[d]);
      tgt.push_back(crop.targets[d]);
    }
    rho.push_back(spearman(pred, tgt));
  }

  fs::create_directories(cfg.out_dir);
  CheckpointData ck;
  ck.config = {{"kind", "regime-predictor"},
               {"regime_features",
                {{"l_cap", predictor.feat.l_cap},
                 {"n_points", predictor.feat.n_points},
                 {"n_spec_bins", predictor.feat.n_spec_bins}}}};
  predictor.append_arrays(ck.arrays);
  const std::string dir = (fs::path(cfg.out_dir) / "checkpoint").string();
  save_checkpoint(dir, ck);

  json out = {{"checkpoint", dir},
              {"epochs", stats.epochs},
              {"val_mse", stats.val_mse},
              {"train_mse", stats.train_mse},
              {"val_spearman", rho},
              {"n_crops", table.crops.size()}};
  std::ofstream rep((fs::path(cfg.out_dir) / "regime_report.json").string());
  rep << out.dump(2) << "\n";
  return out.dump(2);
}

std::string run_train(const ExperimentConfig& cfg) {
  if (cfg.train_path.empty()) fail(ErrorCode::invalid_config, "train: missing data.train");
  if (cfg.out_dir.empty()) fail(ErrorCode::invalid_config, "train: missing out dir");
  fs::create_directories(cfg.out_dir);
  const Dataset ds = load_dataset(cfg.train_path);

  ModelBundle bundle = cfg.resume_dir.empty() ? build_fresh_bundle(cfg) : load_bundle(cfg.resume_dir);

  const std::string log_path = (fs::path(cfg.out_dir) / "train_log.jsonl").string();
  LoopHooks hooks;
  const std::string out_dir = cfg.out_dir;
  const int64_t ck_every = cfg.checkpoint_every;
  ModelBundle* bptr = &bundle;
  hooks.on_step = [bptr, out_dir, ck_every](int64_t step, const StepStats&) {
    if (ck_every > 0 && step % ck_every == 0) {
      save_bundle((fs::path(out_dir) / ("checkpoint-" + std::to_string(step))).string(), *bptr,
                  true);
    }
  };
  training_loop(bundle, ds, cfg.seed, cfg.steps, cfg.batch_size, cfg.lr, cfg.warmup_steps,
                cfg.constant_lr, cfg.weight_decay, cfg.clip_norm, cfg.t_ctx, cfg.t_hor,
                cfg.stride, log_path, cfg.log_every, hooks);

  const std::string final_dir = (fs::path(cfg.out_dir) / "checkpoint").string();
  save_bundle(final_dir, bundle, true);
  json out = {{"checkpoint", final_dir}, {"steps", bundle.step}, {"log", log_path}};
  return out.dump(2);
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

namespace {

int series_period_tag(const Series& s) {
  if (s.freq.rfind("m=", 0) == 0) {
    const int m = std::atoi(s.freq.c_str() + 2);
    if (m >= 1) return m;
  }
  return 1;
}

std::vector<int> default_context_grid() { return {32, 48, 64, 96, 144, 224, 336, 512}; }

struct SeriesEval {
  MetricSet model;
  MetricSet baseline;
};

// Evaluate one series at a given context length; window ends `shift` steps
// before the series end (0 = test split, t_hor = validation split).
std::optional<SeriesEval> eval_series(const ModelBundle* bundle, const Series& s, int t_ctx,
                                      int t_hor, int m, int64_t shift) {
  const int64_t len = int64_t(s.length());
  const int64_t offset = len - shift - t_hor - t_ctx;
  if (offset < 0) return std::nullopt;
  const Window w = window_at(s, offset, t_ctx, t_hor);
  std::vector<std::vector<double>> model_pred;
  if (bundle) {
    model_pred = forecast(bundle->model, w);
  }
  MetricSet macc{}, bacc{};
  int used = 0;
  const int m_eff = std::clamp(m, 1, t_ctx - 1);
  for (size_t v = 0; v < w.context.size(); ++v) {
    const auto naive = seasonal_naive_forecast(w.context[v], m_eff, t_hor);
    const auto& pred = bundle ? model_pred[v] : naive;
    MetricSet ms, bs;
    try {
      ms = eval_metrics(pred, w.horizon[v], w.context[v], m_eff);
      bs = eval_metrics(naive, w.horizon[v], w.context[v], m_eff);
    } catch (const Error&) {
      continue;  // degenerate scale on this variate
    }
    macc.mase += ms.mase;
    macc.smape += ms.smape;
    macc.mae += ms.mae;
    macc.rmse += ms.rmse;
    bacc.mase += bs.mase;
    bacc.smape += bs.smape;
    bacc.mae += bs.mae;
    bacc.rmse += bs.rmse;
    ++used;
  }
  if (used == 0) return std::nullopt;
  const double n = double(used);
  return SeriesEval{{macc.mase / n, macc.smape / n, macc.mae / n, macc.rmse / n},
                    {bacc.mase / n, bacc.smape / n, bacc.mae / n, bacc.rmse / n}};
}

// Mean model/baseline metrics over a task's series; nullopt when nothing
// evaluable.
std::optional<TaskReport> eval_task_at(const ModelBundle* bundle, const Dataset& ds,
                                       const EvalTaskConfig& task, int t_ctx, int64_t shift) {
  MetricSet macc{}, bacc{};
  int count = 0;
  for (const auto& s : ds) {
    const int m = task.season_m > 0 ? task.season_m : series_period_tag(s);
    const auto r = eval_series(bundle, s, t_ctx, task.t_hor, m, shift);
    if (!r) continue;
    macc.mase += r->model.mase;
    macc.smape += r->model.smape;
    macc.mae += r->model.mae;
    macc.rmse += r->model.rmse;
    bacc.mase += r->baseline.mase;
    bacc.smape += r->baseline.smape;
    bacc.mae += r->baseline.mae;
    bacc.rmse += r->baseline.rmse;
    ++count;
  }
  if (count == 0) return std::nullopt;
  const double n = double(count);
  TaskReport report;
  report.name = task.name;
  report.n_series = count;
  report.raw = {macc.mase / n, macc.smape / n, macc.mae / n, macc.rmse / n};
  report.baseline = {bacc.mase / n, bacc.smape / n, bacc.mae / n, bacc.rmse / n};
  report.ratio = metric_ratio(report.raw, report.baseline);
  return report;
}

}  // namespace

std::string run_eval(const ExperimentConfig& cfg) {
  if (cfg.tasks.empty()) fail(ErrorCode::invalid_config, "eval: no tasks configured");
  std::optional<ModelBundle> bundle;
  if (!cfg.eval_seasonal_naive) {
    if (cfg.checkpoint_dir.empty())
      fail(ErrorCode::invalid_config, "eval: missing eval.checkpoint (or seasonal_naive flag)");
    bundle = load_bundle(cfg.checkpoint_dir);
  }
  const ModelBundle* bptr = bundle ? &*bundle : nullptr;

  MetricReport report;
  std::vector<MetricSet> ratios;
  json sweep_info = json::array();
  for (const auto& task : cfg.tasks) {
    const Dataset ds = load_dataset(task.path);
    std::vector<int> candidates =
        task.context_lengths.empty() ? default_context_grid() : task.context_lengths;
    // candidates must leave room for at least T >= 8 descriptors and the
    // token budget
    std::vector<int> feasible;
    for (const int c : candidates) {
      if (c < 8) continue;
      if (bptr) {
        const int p = bptr->model.cfg.patch_len;
        const int tokens = (c + p - 1) / p + (task.t_hor + p - 1) / p;
        if (tokens > bptr->model.cfg.max_tokens) continue;
      }
      feasible.push_back(c);
    }
    if (feasible.empty()) fail(ErrorCode::invalid_config, "eval: no feasible context length");

    int chosen = feasible[0];
    if (cfg.sweep && feasible.size() > 1) {
      double best = std::numeric_limits<double>::infinity();
      for (const int c : feasible) {
        const auto val = eval_task_at(bptr, ds, task, c, task.t_hor);
        if (!val) continue;
        if (val->ratio.mase < best) {
          best = val->ratio.mase;
          chosen = c;
        }
      }
      sweep_info.push_back({{"task", task.name}, {"chosen_t_ctx", chosen}});
    }

    const auto test = eval_task_at(bptr, ds, task, chosen, 0);
    if (!test) fail(ErrorCode::degenerate, "eval: task '" + task.name + "' has no evaluable series");
    report.tasks.push_back(*test);
    ratios.push_back(test->ratio);
  }
  report.aggregate = aggregate_normalized(ratios);

  const std::string text = metric_report_json(report);
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    std::ofstream out((fs::path(cfg.out_dir) / "eval_report.json").string());
    out << text << "\n";
    if (cfg.sweep) {
      std::ofstream sw((fs::path(cfg.out_dir) / "sweep.json").string());
      sw << sweep_info.dump(2) << "\n";
    }
  }
  return text;
}

// ---------------------------------------------------------------------------
// fine-tuning with probe capture
// ---------------------------------------------------------------------------

namespace {

struct ProbeSpec {
  std::vector<WindowRef> windows;
  int t_ctx = 0;
  int t_hor = 0;
  ProbeCapture reference;
};

ProbeCapture capture_probe(const ModelBundle& bundle, const Dataset& ds,
                           const std::vector<WindowRef>& refs, int t_ctx, int t_hor) {
  ProbeCapture cap;
  cap.n_layers = bundle.model.cfg.n_layers;
  cap.n_experts = bundle.model.cfg.experts_total;
  for (const auto& ref : refs) {
    const Window w = window_at(ds[size_t(ref.series)], ref.offset, t_ctx, t_hor);
    const CaptureResult cr = capture_routing(bundle, w);
    if (int(cr.records.size()) != cap.n_layers)
      fail(ErrorCode::mismatch, "probe: layer count mismatch");
    for (const auto& rec : cr.records)
      for (int t = 0; t < rec.n_tokens; ++t) cap.top1.push_back(int32_t(rec.top1(t)));
  }
  return cap;
}

json probe_to_json(const ProbeSpec& probe, const Dataset& ds) {
  json windows = json::array();
  for (const auto& ref : probe.windows)
    windows.push_back({{"series", ds[size_t(ref.series)].id}, {"offset", ref.offset}});
  return json{{"t_ctx", probe.t_ctx},
              {"t_hor", probe.t_hor},
              {"n_layers", probe.reference.n_layers},
              {"n_experts", probe.reference.n_experts},
              {"windows", windows},
              {"top1", probe.reference.top1}};
}

ProbeSpec probe_from_json(const json& j, const Dataset& ds) {
  ProbeSpec probe;
  probe.t_ctx = j.at("t_ctx").get<int>();
  probe.t_hor = j.at("t_hor").get<int>();
  probe.reference.n_layers = j.at("n_layers").get<int>();
  probe.reference.n_experts = j.at("n_experts").get<int>();
  probe.reference.top1 = j.at("top1").get<std::vector<int32_t>>();
  for (const json& wj : j.at("windows")) {
    const std::string id = wj.at("series").get<std::string>();
    int found = -1;
    for (size_t i = 0; i < ds.size(); ++i)
      if (ds[i].id == id) found = int(i);
    if (found < 0) fail(ErrorCode::mismatch, "probe: series '" + id + "' not in dataset");
    probe.windows.push_back({found, wj.at("offset").get<int64_t>()});
  }
  return probe;
}

}  // namespace

std::string run_finetune(const ExperimentConfig& cfg) {
  if (cfg.checkpoint_dir.empty()) fail(ErrorCode::invalid_config, "finetune: missing checkpoint");
  if (cfg.finetune_data.empty()) fail(ErrorCode::invalid_config, "finetune: missing data");
  if (cfg.out_dir.empty()) fail(ErrorCode::invalid_config, "finetune: missing out dir");
  fs::create_directories(cfg.out_dir);

  ModelBundle bundle = load_bundle(cfg.checkpoint_dir);
  bundle.step = 0;          // fine-tuning steps are counted from zero
  bundle.has_opt = false;   // fresh optimizer state for adaptation
  const Dataset ds = load_dataset(cfg.finetune_data);

  auto pool = build_pool(ds, cfg.t_ctx, cfg.t_hor, cfg.stride);
  if (pool.empty()) fail(ErrorCode::invalid_argument, "finetune: no admissible probe windows");
  Rng probe_rng = Rng::stream(cfg.seed, "probe");
  probe_rng.shuffle(pool);

  ProbeSpec probe;
  probe.t_ctx = cfg.t_ctx;
  probe.t_hor = cfg.t_hor;
  probe.windows.assign(pool.begin(),
                       pool.begin() + std::min<size_t>(pool.size(), size_t(cfg.probe_windows)));
  probe.reference = capture_probe(bundle, ds, probe.windows, cfg.t_ctx, cfg.t_hor);
  {
    std::ofstream pf((fs::path(cfg.out_dir) / "probe.json").string());
    pf << probe_to_json(probe, ds).dump() << "\n";
  }

  const std::string rc_path = (fs::path(cfg.out_dir) / "rc_log.jsonl").string();
  std::ofstream rc_log(rc_path);
  double final_rc = 1.0;
  {
    const double rc0 = routing_consistency(
        probe.reference, capture_probe(bundle, ds, probe.windows, cfg.t_ctx, cfg.t_hor));
    rc_log << json{{"step", 0}, {"rc", rc0}}.dump() << "\n";
    final_rc = rc0;
  }

  LoopHooks hooks;
  hooks.on_step = [&](int64_t step, const StepStats&) {
    if (cfg.rc_log_every > 0 &&
        (step % cfg.rc_log_every == 0 || step == cfg.finetune_steps)) {
      const double rc = routing_consistency(
          probe.reference, capture_probe(bundle, ds, probe.windows, cfg.t_ctx, cfg.t_hor));
      rc_log << json{{"step", step}, {"rc", rc}}.dump() << "\n";
      final_rc = rc;
    }
  };

  const std::string log_path = (fs::path(cfg.out_dir) / "train_log.jsonl").string();
  training_loop(bundle, ds, cfg.seed, cfg.finetune_steps, cfg.batch_size, cfg.finetune_lr,
                /*warmup=*/0, /*constant_lr=*/true, cfg.weight_decay, cfg.clip_norm, cfg.t_ctx,
                cfg.t_hor, cfg.stride, log_path, cfg.log_every, hooks);

  const std::string final_dir = (fs::path(cfg.out_dir) / "checkpoint").string();
  save_bundle(final_dir, bundle, true);
  json out = {{"checkpoint", final_dir},
              {"final_rc", final_rc},
              {"rc_log", rc_path},
              {"probe", (fs::path(cfg.out_dir) / "probe.json").string()}};
  return out.dump(2);
}

// ---------------------------------------------------------------------------
// analysis
// ---------------------------------------------------------------------------

std::string run_analyze(const ExperimentConfig& cfg) {
  if (cfg.probe_file.empty() || cfg.analyze_data.empty() || cfg.analyze_checkpoints.empty())
    fail(ErrorCode::invalid_config, "analyze: need probe, data, and checkpoints");
  const Dataset ds = load_dataset(cfg.analyze_data);
  std::ifstream pf(cfg.probe_file);
  if (!pf) fail(ErrorCode::io, "analyze: cannot open probe file " + cfg.probe_file);
  json pj = json::parse(pf, nullptr, false);
  if (pj.is_discarded()) fail(ErrorCode::parse, "analyze: invalid probe json");
  const ProbeSpec probe = probe_from_json(pj, ds);

  json lines = json::array();
  std::string out_text;
  for (const auto& dir : cfg.analyze_checkpoints) {
    const ModelBundle bundle = load_bundle(dir);
    const ProbeCapture cap =
        capture_probe(bundle, ds, probe.windows, probe.t_ctx, probe.t_hor);
    const double rc = routing_consistency(probe.reference, cap);

    // cluster separation of encoder and router spaces under top-1 labels at
    // the last layer
    std::vector<std::vector<double>> enc_points, router_points;
    std::vector<int> labels;
    const int last = bundle.model.cfg.n_layers - 1;
    for (const auto& ref : probe.windows) {
      const Window w = window_at(ds[size_t(ref.series)], ref.offset, probe.t_ctx, probe.t_hor);
      const CaptureResult cr = capture_routing(bundle, w);
      const RoutingRecord& rec = cr.records[size_t(last)];
      for (int t = 0; t < rec.n_tokens; ++t) {
        std::vector<double> ep(static_cast<size_t>(cr.final_tokens.cols));
        for (int c = 0; c < cr.final_tokens.cols; ++c) ep[size_t(c)] = double(cr.final_tokens(t, c));
        enc_points.push_back(std::move(ep));
        std::vector<double> rp(static_cast<size_t>(rec.n_experts));
        for (int e = 0; e < rec.n_experts; ++e)
          rp[size_t(e)] = rec.logits[size_t(t) * size_t(rec.n_experts) + size_t(e)];
        router_points.push_back(std::move(rp));
        labels.push_back(rec.top1(t));
      }
    }
    // labels must be dense in [0, c)
    std::vector<int> remap(size_t(bundle.model.cfg.experts_total), -1);
    int c = 0;
    for (int& l : labels) {
      if (remap[size_t(l)] < 0) remap[size_t(l)] = c++;
      l = remap[size_t(l)];
    }
    double ch_enc = 0.0, ch_router = 0.0;
    if (c >= 2) {
      ch_enc = calinski_harabasz(enc_points, labels);
      ch_router = calinski_harabasz(router_points, labels);
    }
    json line = {{"checkpoint", dir},
                 {"step", bundle.step},
                 {"rc", rc},
                 {"ch_encoder", ch_enc},
                 {"ch_router", ch_router},
                 {"n_clusters", c}};
    lines.push_back(line);
    out_text += line.dump() + "\n";
  }
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    std::ofstream out((fs::path(cfg.out_dir) / "analysis.jsonl").string());
    out << out_text;
  }
  return lines.dump(2);
}

// ---------------------------------------------------------------------------
// ablation matrix
// ---------------------------------------------------------------------------

std::string run_ablate(const ExperimentConfig& cfg) {
  if (cfg.ablate_cells.empty()) fail(ErrorCode::invalid_config, "ablate: no cells configured");
  if (cfg.out_dir.empty()) fail(ErrorCode::invalid_config, "ablate: missing out dir");
  json table = json::array();
  for (const auto& cell : cfg.ablate_cells) {
    ExperimentConfig cell_cfg = cfg;
    cell_cfg.out_dir = (fs::path(cfg.out_dir) / "cells" / cell).string();
    if (cell == "ame") {
      cell_cfg.family = ModelFamily::ame;
    } else if (cell == "standard-moe") {
      cell_cfg.family = ModelFamily::standard_moe;
      cell_cfg.loss.lambda_prior = 0.0;
      cell_cfg.loss.lambda_ortho = 0.0;
    } else if (cell == "dense") {
      cell_cfg.family = ModelFamily::dense;
      cell_cfg.loss.lambda_prior = 0.0;
      cell_cfg.loss.lambda_ortho = 0.0;
    } else if (cell == "reverse-kl") {
      cell_cfg.family = ModelFamily::ame;
      cell_cfg.loss.kl_direction = KlDirection::reverse;
    } else if (cell == "additive-prior") {
      cell_cfg.family = ModelFamily::ame;
      cell_cfg.loss.lambda_prior = 0.0;
      cell_cfg.additive_prior_beta = 1.0;
    } else if (cell.rfind("drop-", 0) == 0) {
      cell_cfg.family = ModelFamily::ame;
      cell_cfg.drop_descriptor = descriptor_index(cell.substr(5));
    } else {
      fail(ErrorCode::invalid_config, "ablate: unknown cell '" + cell + "'");
    }

    run_train(cell_cfg);
    json cell_result = {{"cell", cell}};
    if (!cfg.tasks.empty()) {
      ExperimentConfig eval_cfg = cell_cfg;
      eval_cfg.checkpoint_dir = (fs::path(cell_cfg.out_dir) / "checkpoint").string();
      eval_cfg.eval_seasonal_naive = false;
      const json report = json::parse(run_eval(eval_cfg));
      cell_result["aggregate"] = report.at("aggregate");
    }
    table.push_back(cell_result);
  }
  const std::string text = table.dump(2);
  fs::create_directories(cfg.out_dir);
  std::ofstream out((fs::path(cfg.out_dir) / "ablation.json").string());
  out << text << "\n";
  return text;
}

}  // namespace ame
