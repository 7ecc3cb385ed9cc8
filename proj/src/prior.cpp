#include "ame/prior.hpp"

#include <cmath>

#include "ame/common.hpp"

namespace ame {

int AnchorMap::group_of(int expert) const {
  if (expert >= n_specialized) return -1;
  return expert % kNumDescriptors;
}

AnchorMap build_anchor_map(int n_specialized, int n_shared) {
  if (n_specialized < kNumDescriptors)
    fail(ErrorCode::invalid_argument, "build_anchor_map: need at least 4 specialized experts");
  if (n_shared < 0) fail(ErrorCode::invalid_argument, "build_anchor_map: n_shared must be >= 0");
  AnchorMap m;
  m.n_specialized = n_specialized;
  m.n_shared = n_shared;
  for (int e = 0; e < n_specialized; ++e)
    m.assignment[size_t(e % kNumDescriptors)].push_back(e);
  return m;
}

std::vector<double> specialized_prior(const RegimeProfile& profile, const AnchorMap& map,
                                      int drop_descriptor) {
  std::vector<double> q(size_t(map.n_specialized), 0.0);
  double total = 0.0;
  for (int d = 0; d < kNumDescriptors; ++d) {
    if (d == drop_descriptor) continue;
    const auto& experts = map.assignment[size_t(d)];
    if (experts.empty()) continue;
    const double mass = profile[d] / double(experts.size());
    for (const int e : experts) q[size_t(e)] += mass;
    total += profile[d];
  }
  if (total < 1e-12) {
    // all-zero profile: fall back to uniform rather than failing, since
    // frozen-predictor outputs can underflow
    const double u = 1.0 / double(map.n_specialized);
    for (auto& v : q) v = u;
    return q;
  }
  for (auto& v : q) v /= total;
  return q;
}

double binary_entropy_bits(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -(p * std::log2(p) + (1.0 - p) * std::log2(1.0 - p));
}

double shared_gate_from(double s_max, double h_mean, const GateParams& params) {
  const double z = params.alpha * h_mean - params.b;
  const double sig = 1.0 / (1.0 + std::exp(-z));
  return (1.0 - s_max) * sig;
}

double shared_gate(const RegimeProfile& profile, const GateParams& params, int drop_descriptor) {
  double s = 0.0, h = 0.0;
  int n = 0;
  for (int d = 0; d < kNumDescriptors; ++d) {
    if (d == drop_descriptor) continue;
    s = std::max(s, profile[d]);
    h += binary_entropy_bits(profile[d]);
    ++n;
  }
  h /= double(n);
  return shared_gate_from(s, h, params);
}

ExpertPrior expert_prior(const RegimeProfile& profile, const AnchorMap& map,
                         const GateParams& params, int drop_descriptor) {
  ExpertPrior out;
  const double pi = map.n_shared > 0 ? shared_gate(profile, params, drop_descriptor) : 0.0;
  out.pi_shared = pi;
  const auto q_sp = specialized_prior(profile, map, drop_descriptor);
  out.probs.resize(size_t(map.total()), 0.0);
  for (int e = 0; e < map.n_specialized; ++e) out.probs[size_t(e)] = (1.0 - pi) * q_sp[size_t(e)];
  for (int e = 0; e < map.n_shared; ++e)
    out.probs[size_t(map.n_specialized + e)] = pi / double(map.n_shared);
  return out;
}

std::vector<double> smooth_prior(const std::vector<double>& probs, double eps) {
  std::vector<double> q = probs;
  double total = 0.0;
  for (auto& v : q) {
    v += eps;
    total += v;
  }
  for (auto& v : q) v /= total;
  return q;
}

}  // namespace ame
