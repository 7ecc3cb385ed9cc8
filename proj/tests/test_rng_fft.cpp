#include <doctest.h>

#include <cmath>
#include <complex>

#include "ame/fft.hpp"
#include "ame/rng.hpp"

using namespace ame;

namespace {

// O(T^2) reference DFT used as the independent oracle.
std::vector<double> direct_power_bins(const std::vector<double>& x) {
  const size_t t = x.size();
  std::vector<double> out(t / 2);
  for (size_t k = 1; k <= t / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (size_t n = 0; n < t; ++n) {
      const double ang = -2.0 * M_PI * double(k) * double(n) / double(t);
      re += x[n] * std::cos(ang);
      im += x[n] * std::sin(ang);
    }
    out[k - 1] = re * re + im * im;
  }
  return out;
}

}  // namespace

TEST_CASE("rng: replay determinism and stream independence") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng s1 = Rng::stream(7, "mask", 3);
  Rng s1b = Rng::stream(7, "mask", 3);
  Rng s2 = Rng::stream(7, "mask", 4);
  CHECK(s1.next_u64() == s1b.next_u64());
  CHECK(s1.next_u64() != s2.next_u64());

  Rng u(123);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform01();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("rng: normal moments are plausible") {
  Rng r(5);
  double mean = 0.0, var = 0.0;
  const int n = 20000;
  std::vector<double> xs(n);
  for (auto& x : xs) x = r.normal();
  for (const double x : xs) mean += x;
  mean /= n;
  for (const double x : xs) var += (x - mean) * (x - mean);
  var /= n;
  CHECK(std::fabs(mean) < 0.05);
  CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("fft matches the direct DFT oracle on random input") {
  for (const size_t t : {16u, 64u, 100u, 37u, 128u, 250u}) {
    Rng r(1000 + t);
    std::vector<double> x(t);
    for (auto& v : x) v = r.normal();
    const auto fast = real_power_bins(x);
    const auto slow = direct_power_bins(x);
    REQUIRE(fast.size() == slow.size());
    double max_rel = 0.0;
    for (size_t i = 0; i < fast.size(); ++i) {
      const double denom = std::max(1.0, std::fabs(slow[i]));
      max_rel = std::max(max_rel, std::fabs(fast[i] - slow[i]) / denom);
    }
    CHECK(max_rel < 1e-8);
  }
}

TEST_CASE("fft: Parseval consistency") {
  Rng r(9);
  const size_t t = 96;
  std::vector<double> x(t);
  for (auto& v : x) v = r.normal();
  double mean = 0.0;
  for (const double v : x) mean += v;
  mean /= double(t);
  for (auto& v : x) v -= mean;

  std::vector<std::complex<double>> a(t);
  for (size_t i = 0; i < t; ++i) a[i] = x[i];
  fft(a);
  double lhs = 0.0;
  for (const auto& z : a) lhs += std::norm(z);
  double rhs = 0.0;
  for (const double v : x) rhs += v * v;
  CHECK(lhs == doctest::Approx(rhs * double(t)).epsilon(1e-10));
}
