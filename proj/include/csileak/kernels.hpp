#pragma once

// Data-parallel inner loops shared by the pipeline stages.
//
// Every kernel has a portable scalar reference in `kernels::scalar` and, on
// x86-64, an AVX2/FMA variant in `kernels::avx2`. The unqualified entry
// points dispatch once per process on the CPU's reported features; tests
// pin the ISA with `force_isa` to check the variants against each other.

#include <complex>
#include <span>
#include <string_view>

namespace csileak::kernels {

enum class Isa { Scalar, Avx2 };

Isa active_isa();
std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);
// Override the dispatch choice. Throws if the ISA is not supported here.
void force_isa(Isa isa);
// Return to the automatically detected ISA.
void reset_isa();

// out[i] = |in[i]|
void magnitude(std::span<const std::complex<float>> in, std::span<float> out);
// sum |in[i]|^2, accumulated in double.
double energy(std::span<const std::complex<float>> in);
// y[i] += a * x[i]
void axpy(double a, std::span<const double> x, std::span<double> y);
// sum (a[i] - b[i])^2
double squared_distance(std::span<const double> a, std::span<const double> b);
// sum a[i] * b[i]
double dot(std::span<const double> a, std::span<const double> b);

namespace scalar {
void magnitude(std::span<const std::complex<float>> in, std::span<float> out);
double energy(std::span<const std::complex<float>> in);
void axpy(double a, std::span<const double> x, std::span<double> y);
double squared_distance(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);
}  // namespace scalar

#if defined(CSILEAK_HAVE_AVX2) || defined(__x86_64__)
namespace avx2 {
void magnitude(std::span<const std::complex<float>> in, std::span<float> out);
double energy(std::span<const std::complex<float>> in);
void axpy(double a, std::span<const double> x, std::span<double> y);
double squared_distance(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);
}  // namespace avx2
#endif

}  // namespace csileak::kernels
