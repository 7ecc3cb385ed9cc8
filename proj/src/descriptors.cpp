#include "ame/descriptors.hpp"

#include <algorithm>
#include <cmath>

#include "ame/common.hpp"
#include "ame/fft.hpp"

namespace ame {

const std::array<const char*, 4> kDescriptorNames = {"forecastability", "seasonality", "trend",
                                                     "sparsity"};

namespace {

double variance(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double mean = 0.0;
  for (const double v : x) mean += v;
  mean /= double(x.size());
  double var = 0.0;
  for (const double v : x) var += (v - mean) * (v - mean);
  return var / double(x.size());
}

// OLS slope of y against t = 0..T-1.
double ols_slope(const std::vector<double>& y) {
  const size_t t = y.size();
  const double tm = 0.5 * double(t - 1);
  double ym = 0.0;
  for (const double v : y) ym += v;
  ym /= double(t);
  double sxy = 0.0, sxx = 0.0;
  for (size_t i = 0; i < t; ++i) {
    const double dt = double(i) - tm;
    sxy += dt * (y[i] - ym);
    sxx += dt * dt;
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

}  // namespace

void detrend_linear(std::vector<double>& x) {
  const size_t t = x.size();
  if (t < 2) return;
  const double slope = ols_slope(x);
  const double tm = 0.5 * double(t - 1);
  double ym = 0.0;
  for (const double v : x) ym += v;
  ym /= double(t);
  for (size_t i = 0; i < t; ++i) x[i] -= ym + slope * (double(i) - tm);
}

PowerSpectrum power_spectrum(const std::vector<double>& x, bool detrend) {
  if (x.size() < 4) fail(ErrorCode::invalid_argument, "power_spectrum: need T >= 4");
  std::vector<double> v = x;
  if (detrend) detrend_linear(v);
  PowerSpectrum out;
  out.bins = real_power_bins(v);
  for (const double p : out.bins) out.total_power += p;
  return out;
}

double forecastability(const std::vector<double>& x) {
  const PowerSpectrum spec = power_spectrum(x, /*detrend=*/true);
  if (spec.total_power < 1e-12) return 1.0;  // flat signal: maximally regular
  const double nf = double(spec.bins.size());
  double h = 0.0;
  for (const double p : spec.bins) {
    const double q = p / spec.total_power;
    if (q > 0.0) h -= q * std::log(q);
  }
  const double score = 1.0 - h / std::log(nf);
  return std::clamp(score, 0.0, 1.0);
}

int dominant_period(const PowerSpectrum& spec, int t_len) {
  if (spec.bins.empty() || spec.total_power < 1e-12)
    fail(ErrorCode::degenerate, "dominant_period: degenerate spectrum");
  size_t best = 0;
  for (size_t i = 1; i < spec.bins.size(); ++i) {
    if (spec.bins[i] > spec.bins[best]) best = i;  // ties keep the lower bin
  }
  const int bin = int(best) + 1;
  const int period = int(std::lround(double(t_len) / double(bin)));
  return std::clamp(period, 2, t_len / 2);
}

Decomposition decompose(const std::vector<double>& x, int period) {
  const int t = int(x.size());
  if (period < 2) fail(ErrorCode::invalid_argument, "decompose: period must be >= 2");
  if (t < 2 * period) fail(ErrorCode::invalid_argument, "decompose: need T >= 2*period");

  Decomposition d;
  d.period = period;
  d.trend.resize(size_t(t));
  d.seasonal.resize(size_t(t));
  d.residual.resize(size_t(t));

  // Centered moving average over an edge-padded copy.
  const int lo = period / 2;            // offsets -lo .. period-1-lo
  const int hi = period - 1 - lo;
  std::vector<double> padded(size_t(t + period), 0.0);
  for (int i = 0; i < lo; ++i) padded[size_t(i)] = x[0];
  for (int i = 0; i < t; ++i) padded[size_t(lo + i)] = x[size_t(i)];
  for (int i = 0; i < hi + 1; ++i) padded[size_t(lo + t + i)] = x[size_t(t - 1)];
  for (int i = 0; i < t; ++i) {
    double acc = 0.0;
    for (int j = -lo; j <= hi; ++j) acc += padded[size_t(lo + i + j)];
    d.trend[size_t(i)] = acc / double(period);
  }

  // Per-phase means of the detrended values, re-centered to zero mean.
  std::vector<double> phase_sum(size_t(period), 0.0);
  std::vector<int> phase_cnt(size_t(period), 0);
  for (int i = 0; i < t; ++i) {
    phase_sum[size_t(i % period)] += x[size_t(i)] - d.trend[size_t(i)];
    phase_cnt[size_t(i % period)] += 1;
  }
  double phase_mean = 0.0;
  for (int p = 0; p < period; ++p) {
    phase_sum[size_t(p)] /= double(phase_cnt[size_t(p)]);
    phase_mean += phase_sum[size_t(p)];
  }
  phase_mean /= double(period);
  for (int i = 0; i < t; ++i) {
    d.seasonal[size_t(i)] = phase_sum[size_t(i % period)] - phase_mean;
    d.residual[size_t(i)] = x[size_t(i)] - d.trend[size_t(i)] - d.seasonal[size_t(i)];
  }
  return d;
}

double seasonality_strength(const std::vector<double>& x) {
  if (x.size() < 8) fail(ErrorCode::invalid_argument, "seasonality_strength: need T >= 8");
  const PowerSpectrum spec = power_spectrum(x, /*detrend=*/true);
  if (spec.total_power < 1e-12) return 0.0;
  const int period = dominant_period(spec, int(x.size()));
  if (int(x.size()) < 2 * period) return 0.0;  // decomposition infeasible
  const Decomposition d = decompose(x, period);
  std::vector<double> sr(x.size());
  for (size_t i = 0; i < x.size(); ++i) sr[i] = d.seasonal[i] + d.residual[i];
  const double var_sr = variance(sr);
  if (var_sr < 1e-12) return 0.0;
  return std::clamp(1.0 - variance(d.residual) / var_sr, 0.0, 1.0);
}

double trend_strength(const std::vector<double>& x) {
  if (x.size() < 2) fail(ErrorCode::invalid_argument, "trend_strength: need T >= 2");
  const auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
  const double range = *mx_it - *mn_it;
  if (range <= 0.0) return 0.0;
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - *mn_it) / range;
  const double beta = ols_slope(y);
  return std::min(1.0, std::fabs(beta) * double(x.size()));
}

double sparsity(const std::vector<double>& x) {
  if (x.empty()) fail(ErrorCode::invalid_argument, "sparsity: need T >= 1");
  std::vector<long long> keys(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double q = std::round(x[i] * 1e9);
    // saturate instead of overflowing for extreme magnitudes
    const double lim = 9.0e18;
    keys[i] = (long long)(std::clamp(q, -lim, lim));
  }
  std::sort(keys.begin(), keys.end());
  const size_t unique = size_t(std::unique(keys.begin(), keys.end()) - keys.begin());
  return 1.0 - double(unique) / double(x.size());
}

RegimeProfile structural_profile(const std::vector<double>& x) {
  if (x.size() < 8) fail(ErrorCode::invalid_argument, "structural_profile: need T >= 8");
  RegimeProfile p;
  p.r_f = forecastability(x);
  p.r_s = seasonality_strength(x);
  p.r_t = trend_strength(x);
  p.r_sp = sparsity(x);
  return p;
}

QuantileNormalizer QuantileNormalizer::fit(const std::vector<RegimeProfile>& profiles) {
  if (profiles.size() < 2)
    fail(ErrorCode::invalid_argument, "QuantileNormalizer: need at least 2 fitting profiles");
  QuantileNormalizer n;
  for (int d = 0; d < kNumDescriptors; ++d) {
    auto& r = n.refs_[size_t(d)];
    r.reserve(profiles.size());
    for (const auto& p : profiles) r.push_back(p[d]);
    std::sort(r.begin(), r.end());
  }
  return n;
}

double QuantileNormalizer::apply_one(int descriptor, double value) const {
  const auto& r = refs_[size_t(descriptor)];
  if (r.empty()) fail(ErrorCode::invalid_argument, "QuantileNormalizer: not fitted");
  const auto lo = std::lower_bound(r.begin(), r.end(), value);
  const auto hi = std::upper_bound(lo, r.end(), value);
  const double below = double(lo - r.begin());
  const double equal = double(hi - lo);
  return (below + 0.5 * equal) / double(r.size());
}

RegimeProfile QuantileNormalizer::apply(const RegimeProfile& p) const {
  RegimeProfile out;
  for (int d = 0; d < kNumDescriptors; ++d) out[d] = apply_one(d, p[d]);
  return out;
}

void QuantileNormalizer::set_reference(int descriptor, std::vector<double> sorted_values) {
  if (sorted_values.empty())
    fail(ErrorCode::invalid_argument, "QuantileNormalizer: empty reference");
  refs_[size_t(descriptor)] = std::move(sorted_values);
}

std::array<std::array<double, 4>, 4> descriptor_correlation(
    const std::vector<RegimeProfile>& profiles) {
  const size_t n = profiles.size();
  if (n < 3) fail(ErrorCode::invalid_argument, "descriptor_correlation: need >= 3 profiles");
  std::array<double, 4> mean{}, sd{};
  for (int d = 0; d < 4; ++d) {
    for (const auto& p : profiles) mean[size_t(d)] += p[d];
    mean[size_t(d)] /= double(n);
    for (const auto& p : profiles) {
      const double dv = p[d] - mean[size_t(d)];
      sd[size_t(d)] += dv * dv;
    }
    sd[size_t(d)] = std::sqrt(sd[size_t(d)] / double(n));
    if (sd[size_t(d)] <= 0.0)
      fail(ErrorCode::degenerate,
           std::string("descriptor_correlation: zero variance in ") + kDescriptorNames[size_t(d)]);
  }
  std::array<std::array<double, 4>, 4> c{};
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      double cov = 0.0;
      for (const auto& p : profiles)
        cov += (p[a] - mean[size_t(a)]) * (p[b] - mean[size_t(b)]);
      cov /= double(n);
      c[size_t(a)][size_t(b)] = cov / (sd[size_t(a)] * sd[size_t(b)]);
    }
    c[size_t(a)][size_t(a)] = 1.0;
  }
  return c;
}

}  // namespace ame
