#include "ame/ame.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "ame/experiment.hpp"

namespace {

thread_local std::string g_last_error;

int set_error(const ame::Error& e) {
  g_last_error = e.what();
  return int(e.code());
}

int set_error(const std::exception& e) {
  g_last_error = e.what();
  return AME_E_INTERNAL;
}

template <class Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return AME_OK;
  } catch (const ame::Error& e) {
    return set_error(e);
  } catch (const std::exception& e) {
    return set_error(e);
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

struct ame_dataset {
  ame::Dataset data;
};

struct ame_model {
  ame::ModelBundle bundle;
};

extern "C" {

const char* ame_last_error(void) { return g_last_error.c_str(); }

void ame_free_string(char* s) { std::free(s); }

int ame_dataset_load(const char* path, ame_dataset** out) {
  return guarded([&] {
    if (!path || !out) ame::fail(ame::ErrorCode::invalid_argument, "null argument");
    auto* ds = new ame_dataset{ame::load_dataset(path)};
    *out = ds;
  });
}

int ame_dataset_synth(const char* spec_json, ame_dataset** out) {
  return guarded([&] {
    if (!spec_json || !out) ame::fail(ame::ErrorCode::invalid_argument, "null argument");
    nlohmann::json j = nlohmann::json::parse(spec_json, nullptr, false);
    if (j.is_discarded()) ame::fail(ame::ErrorCode::parse, "invalid spec json");
    ame::SyntheticSpec spec;
    spec.count = j.value("count", int64_t(1));
    spec.length = j.value("length", int64_t(256));
    spec.noise_level = j.value("noise_level", 0.5);
    spec.seed = j.value("seed", uint64_t(0));
    if (j.contains("regime_mix")) {
      const auto& m = j.at("regime_mix");
      spec.regime_mix.seasonal = m.value("seasonal", 0.0);
      spec.regime_mix.trend = m.value("trend", 0.0);
      spec.regime_mix.sparse = m.value("sparse", 0.0);
      spec.regime_mix.noise = m.value("noise", 0.0);
      spec.regime_mix.composite = m.value("composite", 0.0);
    }
    auto* ds = new ame_dataset{ame::gen_synthetic(spec).data};
    *out = ds;
  });
}

int ame_dataset_save(const ame_dataset* ds, const char* path) {
  return guarded([&] {
    if (!ds || !path) ame::fail(ame::ErrorCode::invalid_argument, "null argument");
    ame::save_dataset(ds->data, path);
  });
}

int64_t ame_dataset_size(const ame_dataset* ds) {
  return ds ? int64_t(ds->data.size()) : -1;
}

void ame_dataset_free(ame_dataset* ds) { delete ds; }

int ame_profile_series(const ame_dataset* ds, int64_t index, double out4[4]) {
  return guarded([&] {
    if (!ds || !out4) ame::fail(ame::ErrorCode::invalid_argument, "null argument");
    if (index < 0 || index >= int64_t(ds->data.size()))
      ame::fail(ame::ErrorCode::invalid_argument, "series index out of range");
    const ame::Series& s = ds->data[size_t(index)];
    ame::RegimeProfile acc;
    for (const auto& var : s.variates) {
      const ame::RegimeProfile p = ame::structural_profile(var);
      for (int d = 0; d < 4; ++d) acc[d] += p[d];
    }
    for (int d = 0; d < 4; ++d) out4[d] = acc[d] / double(s.n_variates());
  });
}

int ame_model_load(const char* checkpoint_dir, ame_model** out) {
  return guarded([&] {
    if (!checkpoint_dir || !out) ame::fail(ame::ErrorCode::invalid_argument, "null argument");
    auto* m = new ame_model{ame::load_bundle(checkpoint_dir)};
    *out = m;
  });
}

void ame_model_free(ame_model* m) { delete m; }

int ame_forecast(const ame_model* m, const double* context, int64_t t_ctx, int64_t n_variates,
                 int64_t t_hor, double* out) {
  return guarded([&] {
    if (!m || !context || !out) ame::fail(ame::ErrorCode::invalid_argument, "null argument");
    if (t_ctx < 2 || n_variates < 1 || t_hor < 1)
      ame::fail(ame::ErrorCode::invalid_argument, "bad forecast dimensions");
    ame::Window w;
    w.source_id = "capi";
    for (int64_t v = 0; v < n_variates; ++v) {
      w.context.emplace_back(context + v * t_ctx, context + (v + 1) * t_ctx);
      w.horizon.emplace_back(size_t(t_hor), 0.0);
    }
    const auto pred = ame::forecast(m->bundle.model, w);
    for (int64_t v = 0; v < n_variates; ++v)
      for (int64_t h = 0; h < t_hor; ++h) out[v * t_hor + h] = pred[size_t(v)][size_t(h)];
  });
}

int ame_model_profile(const ame_model* m, const double* values, int64_t t, double out4[4]) {
  return guarded([&] {
    if (!m || !values || !out4) ame::fail(ame::ErrorCode::invalid_argument, "null argument");
    std::vector<double> x(values, values + t);
    const ame::RegimeProfile p = ame::bundle_profile(m->bundle, x);
    for (int d = 0; d < 4; ++d) out4[d] = p[d];
  });
}

int ame_run(const char* subcommand, const char* config_json, char** result_json) {
  return guarded([&] {
    if (!subcommand || !config_json)
      ame::fail(ame::ErrorCode::invalid_argument, "null argument");
    const std::string sub = subcommand;
    const ame::ExperimentConfig cfg = ame::parse_experiment_config_text(config_json);
    std::string result;
    if (sub == "synth") {
      result = ame::run_synth(cfg);
    } else if (sub == "profile") {
      if (cfg.train_path.empty())
        ame::fail(ame::ErrorCode::invalid_config, "profile: missing data.train");
      result = ame::run_profile(cfg.train_path, cfg.out_dir);
    } else if (sub == "train-regime") {
      result = ame::run_train_regime(cfg);
    } else if (sub == "train") {
      result = ame::run_train(cfg);
    } else if (sub == "eval") {
      result = ame::run_eval(cfg);
    } else if (sub == "finetune") {
      result = ame::run_finetune(cfg);
    } else if (sub == "analyze") {
      result = ame::run_analyze(cfg);
    } else if (sub == "ablate") {
      result = ame::run_ablate(cfg);
    } else {
      ame::fail(ame::ErrorCode::invalid_argument, "unknown subcommand: " + sub);
    }
    if (result_json) *result_json = dup_string(result);
  });
}

}  // extern "C"
