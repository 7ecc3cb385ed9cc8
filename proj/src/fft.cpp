#include "ame/fft.hpp"

#include <cmath>

#include "ame/common.hpp"

namespace ame {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  // bit reversal
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? kTwoPi : -kTwoPi) / double(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const auto u = a[i + j];
        const auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    for (auto& z : a) z /= double(n);
  }
}

// Bluestein: DFT of arbitrary length via a power-of-two convolution.
void fft_bluestein(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  size_t m = 1;
  while (m < 2 * n + 1) m <<= 1;

  std::vector<std::complex<double>> chirp(n);
  for (size_t k = 0; k < n; ++k) {
    // exp(-i*pi*k^2/n); reduce k^2 mod 2n to keep the angle accurate
    const unsigned long long k2 = (unsigned long long)(k) * k % (2 * n);
    const double ang = -kTwoPi * 0.5 * double(k2) / double(n);
    chirp[k] = std::complex<double>(std::cos(ang), std::sin(ang));
  }

  std::vector<std::complex<double>> u(m, {0.0, 0.0}), v(m, {0.0, 0.0});
  for (size_t k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
  v[0] = std::conj(chirp[0]);
  for (size_t k = 1; k < n; ++k) v[k] = v[m - k] = std::conj(chirp[k]);

  fft_radix2(u, false);
  fft_radix2(v, false);
  for (size_t i = 0; i < m; ++i) u[i] *= v[i];
  fft_radix2(u, true);

  for (size_t k = 0; k < n; ++k) a[k] = u[k] * chirp[k];
}

}  // namespace

void fft(std::vector<std::complex<double>>& a) {
  if (a.size() <= 1) return;
  if (is_pow2(a.size())) {
    fft_radix2(a, false);
  } else {
    fft_bluestein(a);
  }
}

std::vector<double> real_power_bins(const std::vector<double>& x) {
  const size_t t = x.size();
  if (t < 2) fail(ErrorCode::invalid_argument, "real_power_bins: need T >= 2");
  std::vector<std::complex<double>> a(t);
  for (size_t i = 0; i < t; ++i) a[i] = std::complex<double>(x[i], 0.0);
  fft(a);
  const size_t nf = t / 2;
  std::vector<double> p(nf);
  for (size_t k = 1; k <= nf; ++k) p[k - 1] = std::norm(a[k]);
  return p;
}

}  // namespace ame
