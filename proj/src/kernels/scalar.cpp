#include <cmath>

#include "csileak/kernels.hpp"

namespace csileak::kernels::scalar {

void magnitude(std::span<const std::complex<float>> in, std::span<float> out) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    const float re = in[i].real();
    const float im = in[i].imag();
    out[i] = std::sqrt(re * re + im * im);
  }
}

double energy(std::span<const std::complex<float>> in) {
  double acc = 0.0;
  for (const auto& s : in) {
    const double re = s.real();
    const double im = s.imag();
    acc += re * re + im * im;
  }
  return acc;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace csileak::kernels::scalar
