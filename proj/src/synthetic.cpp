#include "ame/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "ame/common.hpp"
#include "ame/rng.hpp"

namespace ame {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct Component {
  std::vector<double> values;
  int period = 0;
  std::map<std::string, double> params;
};

Component gen_seasonal(Rng& rng, int64_t len, double noise_level) {
  Component c;
  const int p_max = int(std::min<int64_t>(48, len / 4));
  const int p = int(rng.uniform_int(4, p_max));
  const double amp = rng.log_uniform(0.8, 2.5);
  const double phase = rng.uniform(0.0, double(p));
  const bool harmonic = rng.uniform01() < 0.5;
  const double h_amp = harmonic ? 0.3 * amp : 0.0;
  const double sigma = noise_level * amp * rng.uniform(0.25, 0.55);
  c.values.resize(size_t(len));
  for (int64_t t = 0; t < len; ++t) {
    const double th = kTwoPi * (double(t) + phase) / double(p);
    c.values[size_t(t)] = amp * std::sin(th) + h_amp * std::sin(2.0 * th) + sigma * rng.normal();
  }
  c.period = p;
  c.params = {{"amp", amp}, {"sigma", sigma}, {"period", double(p)}};
  return c;
}

Component gen_trend(Rng& rng, int64_t len, double noise_level) {
  Component c;
  const double rise = (rng.uniform01() < 0.5 ? 1.0 : -1.0) * rng.log_uniform(1.5, 5.0);
  const double u = rng.uniform01();
  const int variant = u < 0.45 ? 0 : (u < 0.75 ? 1 : 2);  // linear / quadratic / exponential
  const double sigma = noise_level * std::fabs(rise) * rng.uniform(0.04, 0.15);
  c.values.resize(size_t(len));
  for (int64_t t = 0; t < len; ++t) {
    const double s = double(t) / double(len - 1);
    double drift = 0.0;
    switch (variant) {
      case 0: drift = rise * s; break;
      case 1: drift = rise * s * s; break;
      default: drift = rise * (std::exp(3.0 * s) - 1.0) / (std::exp(3.0) - 1.0); break;
    }
    c.values[size_t(t)] = drift + sigma * rng.normal();
  }
  c.params = {{"rise", rise}, {"variant", double(variant)}, {"sigma", sigma}};
  return c;
}

Component gen_sparse(Rng& rng, int64_t len, double /*noise_level*/) {
  // Intermittent spikes over an exactly repeated baseline. The baseline is
  // kept noise free so the repeated-value structure survives.
  Component c;
  const double rate = rng.uniform(0.03, 0.12);
  const int n_spk = std::max<int>(2, int(std::lround(rate * double(len))));
  const bool periodic = rng.uniform01() < 0.5;
  const double scale = rng.log_uniform(0.8, 3.0);
  c.values.assign(size_t(len), 0.0);
  std::vector<int64_t> times;
  if (periodic) {
    const int64_t p = std::max<int64_t>(4, len / n_spk);
    const int64_t t0 = rng.uniform_int(0, p - 1);
    for (int64_t t = t0; t < len; t += p) times.push_back(t);
    c.period = int(p);
  } else {
    for (int i = 0; i < n_spk; ++i) times.push_back(rng.uniform_int(0, len - 1));
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
  }
  for (const int64_t t : times) {
    const double sign = rng.uniform01() < 0.85 ? 1.0 : -1.0;
    c.values[size_t(t)] = sign * scale * rng.log_uniform(0.5, 2.0);
  }
  c.params = {{"n_spikes", double(times.size())}, {"periodic", periodic ? 1.0 : 0.0}};
  return c;
}

Component gen_noise(Rng& rng, int64_t len, double /*noise_level*/) {
  Component c;
  const double sigma = rng.log_uniform(0.5, 2.0);
  const double u = rng.uniform01();
  const int dist = u < 0.5 ? 0 : (u < 0.75 ? 1 : 2);  // normal / laplace / uniform
  c.values.resize(size_t(len));
  for (auto& x : c.values) {
    switch (dist) {
      case 0: x = sigma * rng.normal(); break;
      case 1: x = sigma * rng.laplace() * 0.7071067811865476; break;
      default: x = sigma * (rng.uniform01() - 0.5) * 3.4641016151377544; break;
    }
  }
  c.params = {{"sigma", sigma}, {"dist", double(dist)}};
  return c;
}

Component gen_family(int family, Rng& rng, int64_t len, double noise_level) {
  switch (family) {
    case 0: return gen_seasonal(rng, len, noise_level);
    case 1: return gen_trend(rng, len, noise_level);
    case 2: return gen_sparse(rng, len, noise_level);
    default: return gen_noise(rng, len, noise_level);
  }
}

const char* kFamilyNames[] = {"seasonal", "trend", "sparse", "noise", "composite"};

// Largest-remainder allocation of `count` slots across the mix weights.
std::vector<int64_t> allocate_counts(const RegimeMix& mix, int64_t count) {
  const double w[5] = {mix.seasonal, mix.trend, mix.sparse, mix.noise, mix.composite};
  double total = 0.0;
  for (const double x : w) {
    if (x < 0.0) fail(ErrorCode::invalid_argument, "gen_synthetic: negative regime weight");
    total += x;
  }
  if (total <= 0.0) fail(ErrorCode::invalid_argument, "gen_synthetic: regime weights sum to zero");
  std::vector<int64_t> counts(5, 0);
  std::vector<std::pair<double, int>> rema;
  int64_t assigned = 0;
  for (int i = 0; i < 5; ++i) {
    const double q = w[i] / total * double(count);
    counts[i] = int64_t(std::floor(q));
    assigned += counts[i];
    rema.push_back({q - std::floor(q), i});
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int64_t r = 0; r < count - assigned; ++r) counts[size_t(rema[size_t(r) % 5].second)]++;
  return counts;
}

}  // namespace

SyntheticResult gen_synthetic(const SyntheticSpec& spec) {
  if (spec.count < 1) fail(ErrorCode::invalid_argument, "gen_synthetic: count must be >= 1");
  if (spec.length < 16) fail(ErrorCode::invalid_argument, "gen_synthetic: length must be >= 16");
  if (spec.noise_level < 0.0)
    fail(ErrorCode::invalid_argument, "gen_synthetic: noise_level must be >= 0");

  const auto counts = allocate_counts(spec.regime_mix, spec.count);
  std::vector<int> families;
  families.reserve(size_t(spec.count));
  for (int f = 0; f < 5; ++f)
    for (int64_t i = 0; i < counts[size_t(f)]; ++i) families.push_back(f);
  Rng order_rng = Rng::stream(spec.seed, "synth-order");
  order_rng.shuffle(families);

  SyntheticResult out;
  out.data.reserve(families.size());
  out.info.reserve(families.size());
  for (size_t i = 0; i < families.size(); ++i) {
    Rng rng = Rng::stream(spec.seed, "synth-series", uint64_t(i));
    const int fam = families[i];
    const double base = rng.uniform(-2.0, 2.0);

    Component comp;
    GenInfo info;
    if (fam == 4) {
      // composite: two distinct concrete families added together
      const int a = int(rng.uniform_int(0, 3));
      int b = int(rng.uniform_int(0, 2));
      if (b >= a) b += 1;
      Component ca = gen_family(a, rng, spec.length, spec.noise_level);
      Component cb = gen_family(b, rng, spec.length, spec.noise_level);
      comp.values.resize(size_t(spec.length));
      for (size_t t = 0; t < comp.values.size(); ++t)
        comp.values[t] = ca.values[t] + cb.values[t];
      comp.period = ca.period != 0 ? ca.period : cb.period;
      info.params = {{"family_a", double(a)}, {"family_b", double(b)}};
    } else {
      comp = gen_family(fam, rng, spec.length, spec.noise_level);
      info.params = comp.params;
    }

    Series s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "syn-%06zu", i);
    s.id = buf;
    s.label = kFamilyNames[fam];
    s.freq = "m=" + std::to_string(comp.period > 0 ? comp.period : 1);
    s.variates.emplace_back(comp.values.size());
    for (size_t t = 0; t < comp.values.size(); ++t) s.variates[0][t] = base + comp.values[t];
    out.data.push_back(std::move(s));

    info.family = kFamilyNames[fam];
    info.period = comp.period;
    out.info.push_back(std::move(info));
  }
  return out;
}

}  // namespace ame
