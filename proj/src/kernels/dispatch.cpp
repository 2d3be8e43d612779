#include <atomic>

#include "csileak/error.hpp"
#include "csileak/kernels.hpp"

namespace csileak::kernels {

namespace {

Isa detect() {
#if defined(CSILEAK_HAVE_AVX2)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::Avx2;
#endif
  return Isa::Scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

Isa active_isa() { return current().load(std::memory_order_relaxed); }

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) { return isa == Isa::Scalar || detect() == Isa::Avx2; }

void force_isa(Isa isa) {
  if (!isa_supported(isa)) throw Error("kernels: ISA '" + std::string(isa_name(isa)) + "' not supported");
  current().store(isa, std::memory_order_relaxed);
}

void reset_isa() { current().store(detect(), std::memory_order_relaxed); }

#if defined(CSILEAK_HAVE_AVX2)
#define CSILEAK_DISPATCH(fn, ...)                                   \
  (active_isa() == Isa::Avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__))
#else
#define CSILEAK_DISPATCH(fn, ...) scalar::fn(__VA_ARGS__)
#endif

void magnitude(std::span<const std::complex<float>> in, std::span<float> out) {
  if (out.size() < in.size()) throw Error("kernels::magnitude: output too short");
  CSILEAK_DISPATCH(magnitude, in, out);
}

double energy(std::span<const std::complex<float>> in) { return CSILEAK_DISPATCH(energy, in); }

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (y.size() < x.size()) throw Error("kernels::axpy: output too short");
  CSILEAK_DISPATCH(axpy, a, x, y);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("kernels::squared_distance: length mismatch");
  return CSILEAK_DISPATCH(squared_distance, a, b);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("kernels::dot: length mismatch");
  return CSILEAK_DISPATCH(dot, a, b);
}

}  // namespace csileak::kernels
