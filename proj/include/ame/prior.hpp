#pragma once

#include <vector>

#include "ame/descriptors.hpp"

namespace ame {

// Assignment of specialized experts to descriptors. Specialized experts
// occupy indices [0, n_specialized); shared experts follow them.
struct AnchorMap {
  int n_specialized = 0;
  int n_shared = 0;
  std::array<std::vector<int>, 4> assignment;  // expert indices per descriptor

  int total() const { return n_specialized + n_shared; }
  // descriptor anchoring a specialized expert, -1 for shared experts
  int group_of(int expert) const;
};

struct GateParams {
  double alpha = 4.0;
  double b = 2.0;
  bool learnable = false;
};

struct ExpertPrior {
  std::vector<double> probs;  // specialized first, then shared; sums to 1
  double pi_shared = 0.0;
};

// Round-robin anchor assignment: descriptor d receives experts {d, d+4, ...},
// so group sizes differ by at most one.
AnchorMap build_anchor_map(int n_specialized, int n_shared);

// q_sp(e|X) proportional to the anchored descriptor scores; uniform fallback
// when the profile is entirely zero.
std::vector<double> specialized_prior(const RegimeProfile& profile, const AnchorMap& map,
                                      int drop_descriptor = -1);

// (1 - max_d g_d) * sigmoid(alpha * H - b), H the mean binary entropy (bits)
// of the scores.
double shared_gate(const RegimeProfile& profile, const GateParams& params,
                   int drop_descriptor = -1);
// Same gate evaluated directly from (S, H); exposed for grid tests.
double shared_gate_from(double s_max, double h_mean, const GateParams& params);

// Final prior over all experts; pi_shared is forced to 0 when there are no
// shared experts.
ExpertPrior expert_prior(const RegimeProfile& profile, const AnchorMap& map,
                         const GateParams& params, int drop_descriptor = -1);

// Epsilon-smoothed copy (q + eps, renormalized) used by the KL loss so both
// divergence directions stay finite.
std::vector<double> smooth_prior(const std::vector<double>& probs, double eps = 1e-8);

double binary_entropy_bits(double p);

}  // namespace ame
