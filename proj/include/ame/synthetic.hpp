#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "ame/series.hpp"

namespace ame {

// Weights over the generator families. They do not need to sum to 1; series
// counts are allocated proportionally (largest-remainder) so a one-hot-per-
// family mix of weight 1 with count 4 yields exactly one series per family.
struct RegimeMix {
  double seasonal = 1.0;
  double trend = 1.0;
  double sparse = 1.0;
  double noise = 1.0;
  double composite = 0.0;
};

struct SyntheticSpec {
  int64_t count = 1;
  int64_t length = 16;
  RegimeMix regime_mix;
  double noise_level = 0.5;
  uint64_t seed = 0;
};

struct GenInfo {
  std::string family;
  int period = 0;  // seasonal (or periodic-sparse) period, 0 when absent
  std::map<std::string, double> params;
};

struct SyntheticResult {
  Dataset data;
  std::vector<GenInfo> info;  // parallel to data
};

// Deterministic regime-labeled corpus. Each series is univariate, labeled
// with its family, and carries "m=<period>" in the freq tag so evaluation
// can recover the generator period.
SyntheticResult gen_synthetic(const SyntheticSpec& spec);

}  // namespace ame
