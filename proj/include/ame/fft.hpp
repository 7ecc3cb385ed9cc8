#pragma once

#include <complex>
#include <vector>

namespace ame {

// In-place complex FFT, radix-2 for power-of-two lengths and Bluestein's
// chirp-z algorithm otherwise. Forward transform, no normalization.
void fft(std::vector<std::complex<double>>& a);

// DFT of a real input at the positive-frequency bins 1..floor(T/2).
// Returns squared magnitudes |X_k|^2 (the DC bin is excluded).
std::vector<double> real_power_bins(const std::vector<double>& x);

}  // namespace ame
