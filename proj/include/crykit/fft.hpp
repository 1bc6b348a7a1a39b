#pragma once

#include <complex>
#include <vector>

namespace crykit {

// In-place complex DFT. Radix-2 for power-of-two sizes, Bluestein
// otherwise, so any fft_len works. inverse=true applies the 1/N scale.
void fft(std::vector<std::complex<double>>& data, bool inverse = false);

// DFT of a real frame; returns the full (two-sided) spectrum.
std::vector<std::complex<double>> fft_real(const std::vector<double>& frame);

}  // namespace crykit
