#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ame/checkpoint.hpp"
#include "ame/descriptors.hpp"
#include "ame/series.hpp"

namespace ame {

// Fixed feature map: the most recent l_cap values (z-scored, stride
// downsampled to n_points) concatenated with the leading n_spec_bins of the
// normalized detrended power spectrum.
struct RegimeFeatureConfig {
  int l_cap = 192;
  int n_points = 64;
  int n_spec_bins = 32;
  int dim() const { return n_points + n_spec_bins; }
};

std::vector<double> regime_features(const std::vector<double>& x, const RegimeFeatureConfig& fc);

struct LabeledCrop {
  std::vector<double> values;
  RegimeProfile targets;  // quantile-normalized analytical profile
};

struct LabelTable {
  std::vector<LabeledCrop> crops;
  QuantileNormalizer normalizer;
};

// Uniformly samples (series, variate, offset) crops, computes analytical
// profiles, fits the quantile normalizer on them, and stores normalized
// targets. Deterministic given seed.
LabelTable build_label_table(const Dataset& ds, int n_crops, int crop_len, uint64_t seed);

struct RegimePredictorConfig {
  RegimeFeatureConfig features;
  int hidden1 = 64;
  int hidden2 = 32;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 64;
  int max_epochs = 200;
  int patience = 15;
  double val_fraction = 0.2;
  uint64_t seed = 0;
};

// Four independent sigmoid-terminated regressors, one per descriptor. Kept
// frozen after training; predict() never mutates parameters.
class RegimePredictor {
 public:
  struct Net {
    Mat<float> w1, b1, w2, b2, w3, b3;
  };

  RegimeFeatureConfig feat;
  QuantileNormalizer normalizer;
  std::array<Net, 4> nets;
  bool frozen = false;

  // Uses the most recent l_cap values when the input is longer.
  RegimeProfile predict(const std::vector<double>& x) const;
  uint64_t param_checksum() const;

  void append_arrays(std::vector<ArrayRecord>& out) const;
  static RegimePredictor from_checkpoint(const CheckpointData& ck);
  static bool present_in(const CheckpointData& ck);
};

struct RegimeTrainStats {
  int epochs = 0;
  std::array<double, 4> train_mse{};
  std::array<double, 4> val_mse{};
};

RegimePredictor train_regime_predictor(const LabelTable& table, const RegimePredictorConfig& cfg,
                                       RegimeTrainStats* stats = nullptr);

// Spearman rank correlation with mid-rank ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace ame
