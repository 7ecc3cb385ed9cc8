// ame command-line front end. All functionality lives behind the C API in
// libame; this tool only assembles configuration documents and reports
// results.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ame/ame.h"

namespace {

using nlohmann::json;

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) {
    std::cerr << "error: cannot open config file: " << path << "\n";
    std::exit(2);
  }
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    std::cerr << "error: invalid JSON in " << path << "\n";
    std::exit(2);
  }
  return j;
}

int invoke(const std::string& subcommand, json config) {
  char* result = nullptr;
  const std::string text = config.dump();
  const int rc = ame_run(subcommand.c_str(), text.c_str(), &result);
  if (rc != AME_OK) {
    std::cerr << "error (" << rc << "): " << ame_last_error() << "\n";
    return 1;
  }
  if (result) {
    std::cout << result << "\n";
    ame_free_string(result);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ame: structure-guided sparse mixture-of-experts time series forecasting"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string preset;
  uint64_t seed = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "random seed")->each([&](const std::string&) {
      seed_set = true;
    });
    sub->add_option("--preset", preset, "model preset (tiny|small)");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a regime-labeled synthetic dataset");
  CLI::App* profile = app.add_subcommand("profile", "emit structural profiles for a dataset");
  std::string profile_data;
  profile->add_option("--data", profile_data, "dataset JSONL path");
  CLI::App* train_regime =
      app.add_subcommand("train-regime", "train the frozen regime predictor");
  CLI::App* train = app.add_subcommand("train", "train a forecasting model");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a model against seasonal naive");
  bool eval_sweep = false;
  eval->add_flag("--sweep", eval_sweep, "sweep context lengths on the validation split");
  CLI::App* finetune =
      app.add_subcommand("finetune", "fine-tune with probe capture and RC logging");
  CLI::App* analyze = app.add_subcommand("analyze", "routing consistency and CH analysis");
  CLI::App* ablate = app.add_subcommand("ablate", "run the configured ablation matrix");

  for (CLI::App* sub : {synth, profile, train_regime, train, eval, finetune, analyze, ablate})
    add_common(sub);

  CLI11_PARSE(app, argc, argv);

  json config = load_config_file(config_path);
  if (!out_dir.empty()) config["out"] = out_dir;
  if (seed_set) config["seed"] = seed;
  if (!preset.empty()) config["model"]["preset"] = preset;

  if (synth->parsed()) return invoke("synth", config);
  if (profile->parsed()) {
    if (!profile_data.empty()) config["data"]["train"] = profile_data;
    return invoke("profile", config);
  }
  if (train_regime->parsed()) return invoke("train-regime", config);
  if (train->parsed()) return invoke("train", config);
  if (eval->parsed()) {
    if (eval_sweep) config["eval"]["sweep"] = true;
    return invoke("eval", config);
  }
  if (finetune->parsed()) return invoke("finetune", config);
  if (analyze->parsed()) return invoke("analyze", config);
  if (ablate->parsed()) return invoke("ablate", config);
  return 1;
}
