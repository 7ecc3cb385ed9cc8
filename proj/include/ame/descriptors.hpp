#pragma once

#include <array>
#include <string>
#include <vector>

namespace ame {

// The four-score structural profile, every entry in [0,1].
// Order: forecastability, seasonality strength, trend strength, sparsity.
struct RegimeProfile {
  double r_f = 0.0;
  double r_s = 0.0;
  double r_t = 0.0;
  double r_sp = 0.0;

  double operator[](int d) const {
    switch (d) {
      case 0: return r_f;
      case 1: return r_s;
      case 2: return r_t;
      default: return r_sp;
    }
  }
  double& operator[](int d) {
    switch (d) {
      case 0: return r_f;
      case 1: return r_s;
      case 2: return r_t;
      default: return r_sp;
    }
  }
};

constexpr int kNumDescriptors = 4;
extern const std::array<const char*, 4> kDescriptorNames;

struct PowerSpectrum {
  std::vector<double> bins;  // squared magnitudes at bins 1..floor(T/2)
  double total_power = 0.0;
};

struct Decomposition {
  std::vector<double> trend;
  std::vector<double> seasonal;
  std::vector<double> residual;
  int period = 0;
};

// Subtract the least-squares line in place.
void detrend_linear(std::vector<double>& x);

// Power at positive-frequency bins of the (optionally detrended) input.
// The DC bin is excluded; N_f = floor(T/2).
PowerSpectrum power_spectrum(const std::vector<double>& x, bool detrend);

// 1 - H(p)/log(N_f) on the normalized detrended spectrum. A spectrum with
// total power below 1e-12 counts as maximally regular and returns 1.
double forecastability(const std::vector<double>& x);

// round(T / argmax-bin-index), ties toward the longer period, clamped to
// [2, floor(T/2)]. Throws on a degenerate (near-zero) spectrum.
int dominant_period(const PowerSpectrum& spec, int t_len);

// Classical decomposition: centered moving-average trend (edge padded),
// per-phase seasonal means re-centered to zero, residual remainder.
Decomposition decompose(const std::vector<double>& x, int period);

// 1 - Var(R)/Var(S+R), clamped to [0,1]; 0 on degenerate inputs.
double seasonality_strength(const std::vector<double>& x);

// min(1, |slope| * T) of the min-max normalized series; 0 on zero range.
double trend_strength(const std::vector<double>& x);

// 1 - N_unique/T with values quantized at 1e-9 absolute.
double sparsity(const std::vector<double>& x);

RegimeProfile structural_profile(const std::vector<double>& x);

// Maps descriptor values to their empirical mid-ranks within a fitting
// sample, yielding approximately uniform scores on [0,1].
class QuantileNormalizer {
 public:
  QuantileNormalizer() = default;
  static QuantileNormalizer fit(const std::vector<RegimeProfile>& profiles);

  RegimeProfile apply(const RegimeProfile& p) const;
  double apply_one(int descriptor, double value) const;

  const std::vector<double>& reference(int descriptor) const { return refs_[size_t(descriptor)]; }
  bool fitted() const { return !refs_[0].empty(); }

  // Serialization hooks for the checkpoint container.
  void set_reference(int descriptor, std::vector<double> sorted_values);

 private:
  std::array<std::vector<double>, 4> refs_;
};

// Pearson correlation matrix of the four descriptors over a profile sample.
std::array<std::array<double, 4>, 4> descriptor_correlation(
    const std::vector<RegimeProfile>& profiles);

}  // namespace ame
