#include <doctest.h>

#include <cmath>

#include "ame/common.hpp"
#include "ame/prior.hpp"
#include "ame/rng.hpp"

using namespace ame;

namespace {

RegimeProfile profile_of(double f, double s, double t, double sp) {
  RegimeProfile p;
  p.r_f = f;
  p.r_s = s;
  p.r_t = t;
  p.r_sp = sp;
  return p;
}

RegimeProfile random_profile(Rng& r) {
  return profile_of(r.uniform01(), r.uniform01(), r.uniform01(), r.uniform01());
}

}  // namespace

TEST_CASE("build_anchor_map: round-robin partition") {
  const auto m4 = build_anchor_map(4, 1);
  for (int d = 0; d < 4; ++d) {
    REQUIRE(m4.assignment[size_t(d)].size() == 1);
    CHECK(m4.assignment[size_t(d)][0] == d);
  }

  const auto m8 = build_anchor_map(8, 2);
  for (int d = 0; d < 4; ++d) CHECK(m8.assignment[size_t(d)].size() == 2);
  CHECK(m8.assignment[0] == std::vector<int>{0, 4});

  const auto m5 = build_anchor_map(5, 0);
  CHECK(m5.assignment[0].size() == 2);
  CHECK(m5.assignment[1].size() == 1);
  CHECK(m5.assignment[2].size() == 1);
  CHECK(m5.assignment[3].size() == 1);

  CHECK_THROWS_AS(build_anchor_map(3, 1), Error);

  // partition property: every expert appears exactly once
  for (const auto& m : {m4, m8, m5}) {
    std::vector<int> seen(size_t(m.n_specialized), 0);
    for (int d = 0; d < 4; ++d)
      for (const int e : m.assignment[size_t(d)]) seen[size_t(e)]++;
    for (const int c : seen) CHECK(c == 1);
  }
}

TEST_CASE("specialized_prior") {
  const auto map4 = build_anchor_map(4, 0);
  auto q = specialized_prior(profile_of(1, 0, 0, 0), map4);
  CHECK(q[0] == doctest::Approx(1.0));
  CHECK(q[1] == 0.0);

  q = specialized_prior(profile_of(0.5, 0.5, 0.5, 0.5), map4);
  for (const double v : q) CHECK(v == doctest::Approx(0.25));

  // brute-force normalization oracle over 8 experts (2 per descriptor)
  const auto map8 = build_anchor_map(8, 0);
  const auto p = profile_of(0.8, 0.2, 0.4, 0.6);
  q = specialized_prior(p, map8);
  const double total = 0.8 + 0.2 + 0.4 + 0.6;
  for (int e = 0; e < 8; ++e) {
    const double expect = p[e % 4] / (2.0 * total);
    CHECK(std::fabs(q[size_t(e)] - expect) < 1e-12);
  }

  // all-zero profile falls back to uniform
  q = specialized_prior(profile_of(0, 0, 0, 0), map4);
  for (const double v : q) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("shared_gate: suppression, closed form, direct oracle") {
  GateParams g;  // alpha=4, b=2
  CHECK(shared_gate(profile_of(1, 0, 0, 0), g) == doctest::Approx(0.0));

  const double v = shared_gate(profile_of(0.5, 0.5, 0.5, 0.5), g);
  CHECK(std::fabs(v - 0.440399) < 1e-6);

  Rng r(17);
  for (int rep = 0; rep < 200; ++rep) {
    const auto p = random_profile(r);
    double s = 0, h = 0;
    for (int d = 0; d < 4; ++d) {
      s = std::max(s, p[d]);
      const double x = p[d];
      if (x > 0 && x < 1) h += -(x * std::log2(x) + (1 - x) * std::log2(1 - x));
    }
    h /= 4.0;
    const double oracle = (1.0 - s) / (1.0 + std::exp(-(g.alpha * h - g.b)));
    CHECK(std::fabs(shared_gate(p, g) - oracle) < 1e-12);
  }
}

TEST_CASE("expert_prior: composition") {
  GateParams g;
  const auto map41 = build_anchor_map(4, 1);
  auto q = expert_prior(profile_of(1, 0, 0, 0), map41, g);
  CHECK(q.probs[0] == doctest::Approx(1.0));
  CHECK(q.probs[4] == doctest::Approx(0.0));

  const auto qu = expert_prior(profile_of(0.5, 0.5, 0.5, 0.5), map41, g);
  const double pi = qu.pi_shared;
  for (int e = 0; e < 4; ++e) CHECK(qu.probs[size_t(e)] == doctest::Approx((1 - pi) / 4));
  CHECK(qu.probs[4] == doctest::Approx(pi));

  // composition oracle with 8+2 experts
  const auto map82 = build_anchor_map(8, 2);
  Rng r(23);
  for (int rep = 0; rep < 100; ++rep) {
    const auto p = random_profile(r);
    const auto full = expert_prior(p, map82, g);
    const double pish = shared_gate(p, g);
    const auto qsp = specialized_prior(p, map82);
    for (int e = 0; e < 8; ++e)
      CHECK(std::fabs(full.probs[size_t(e)] - (1 - pish) * qsp[size_t(e)]) < 1e-12);
    for (int e = 8; e < 10; ++e)
      CHECK(std::fabs(full.probs[size_t(e)] - pish / 2.0) < 1e-12);
  }
}

TEST_CASE("expert_prior: normalization over configurations") {
  GateParams g;
  Rng r(29);
  for (int n_sp = 4; n_sp <= 10; ++n_sp) {
    for (int n_sh = 0; n_sh <= 2; ++n_sh) {
      const auto map = build_anchor_map(n_sp, n_sh);
      for (int rep = 0; rep < 500; ++rep) {
        const auto q = expert_prior(random_profile(r), map, g);
        double total = 0;
        for (const double v : q.probs) {
          CHECK(v >= 0.0);
          total += v;
        }
        CHECK(std::fabs(total - 1.0) <= 1e-9);
        if (n_sh == 0) CHECK(q.pi_shared == 0.0);
      }
    }
  }
}

TEST_CASE("gate monotonicity on an (S, H) grid") {
  GateParams g;
  const int n = 50;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j + 1 < n; ++j) {
      const double s = double(i) / (n - 1);
      const double h1 = double(j) / (n - 1);
      const double h2 = double(j + 1) / (n - 1);
      CHECK(shared_gate_from(s, h1, g) <= shared_gate_from(s, h2, g) + 1e-15);
      const double s1 = double(j) / (n - 1);
      const double s2 = double(j + 1) / (n - 1);
      const double h = double(i) / (n - 1);
      CHECK(shared_gate_from(s2, h, g) <= shared_gate_from(s1, h, g) + 1e-15);
    }
  }
}

TEST_CASE("anchor dominance and permutation symmetry breaking") {
  GateParams g;
  const auto map82 = build_anchor_map(8, 2);
  Rng r(31);
  for (int rep = 0; rep < 100; ++rep) {
    const double base = r.uniform(0.1, 0.5);
    auto p = profile_of(base, base, base, base);
    const int hi = int(r.uniform_int(0, 3));
    int lo = int(r.uniform_int(0, 2));
    if (lo >= hi) lo += 1;
    p[hi] = base + 0.3;
    const auto q = expert_prior(p, map82, g);
    double mass_hi = 0, mass_lo = 0;
    for (const int e : map82.assignment[size_t(hi)]) mass_hi += q.probs[size_t(e)];
    for (const int e : map82.assignment[size_t(lo)]) mass_lo += q.probs[size_t(e)];
    CHECK(mass_hi > mass_lo);

    // swapping two descriptor scores permutes the anchored blocks
    auto ps = p;
    std::swap(ps[hi], ps[lo]);
    const auto qs = expert_prior(ps, map82, g);
    for (size_t k = 0; k < map82.assignment[size_t(hi)].size(); ++k) {
      CHECK(qs.probs[size_t(map82.assignment[size_t(lo)][k])] ==
            doctest::Approx(q.probs[size_t(map82.assignment[size_t(hi)][k])]));
      CHECK(qs.probs[size_t(map82.assignment[size_t(hi)][k])] ==
            doctest::Approx(q.probs[size_t(map82.assignment[size_t(lo)][k])]));
    }
    CHECK(qs.probs[8] == doctest::Approx(q.probs[8]));
  }
}

TEST_CASE("smooth_prior keeps normalization and positivity") {
  Rng r(37);
  const auto map = build_anchor_map(4, 1);
  GateParams g;
  for (int rep = 0; rep < 100; ++rep) {
    const auto q = expert_prior(profile_of(1, 0, 0, 0), map, g);
    const auto s = smooth_prior(q.probs);
    double total = 0;
    for (const double v : s) {
      CHECK(v > 0.0);
      total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("drop-descriptor renormalizes over the remaining three") {
  GateParams g;
  const auto map = build_anchor_map(4, 1);
  const auto p = profile_of(0.8, 0.2, 0.4, 0.6);
  const auto q = expert_prior(p, map, g, /*drop=*/0);
  CHECK(q.probs[0] == doctest::Approx(0.0));
  const double total = 0.2 + 0.4 + 0.6;
  const double pi = q.pi_shared;
  CHECK(q.probs[1] == doctest::Approx((1 - pi) * 0.2 / total));
  CHECK(q.probs[2] == doctest::Approx((1 - pi) * 0.4 / total));
  CHECK(q.probs[3] == doctest::Approx((1 - pi) * 0.6 / total));
}
