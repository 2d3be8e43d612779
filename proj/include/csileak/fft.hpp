#pragma once

#include <complex>
#include <vector>

namespace csileak {

using cplx = std::complex<double>;

// Unnormalized in-place DFT of arbitrary length (FFTW underneath).
// forward: X[k] = sum x[n] e^{-2 pi i k n / N}; inverse uses +i and no 1/N.
void fft_inplace(std::vector<cplx>& data, bool inverse = false);

// Biased autocorrelation r[k] = sum_n x[n] x[n+k] for k in [0, max_lag].
std::vector<double> autocorrelation(const std::vector<double>& x, std::size_t max_lag);

}  // namespace csileak
