// Compiled with -mavx2 -mfma; only reached when the dispatcher has confirmed
// both features at runtime.

#include <immintrin.h>

#include <cmath>

#include "csileak/kernels.hpp"

namespace csileak::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

}  // namespace

void magnitude(std::span<const std::complex<float>> in, std::span<float> out) {
  const float* src = reinterpret_cast<const float*>(in.data());
  const std::size_t n = in.size();
  // hadd interleaves the 128-bit lanes; this restores sample order.
  const __m256i order = _mm256_setr_epi32(0, 1, 4, 5, 2, 3, 6, 7);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 a = _mm256_loadu_ps(src + 2 * i);
    __m256 b = _mm256_loadu_ps(src + 2 * i + 8);
    a = _mm256_mul_ps(a, a);
    b = _mm256_mul_ps(b, b);
    __m256 p = _mm256_permutevar8x32_ps(_mm256_hadd_ps(a, b), order);
    _mm256_storeu_ps(out.data() + i, _mm256_sqrt_ps(p));
  }
  for (; i < n; ++i) {
    const float re = in[i].real();
    const float im = in[i].imag();
    out[i] = std::sqrt(re * re + im * im);
  }
}

double energy(std::span<const std::complex<float>> in) {
  const float* src = reinterpret_cast<const float*>(in.data());
  const std::size_t nf = in.size() * 2;
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= nf; i += 8) {
    __m256d x0 = _mm256_cvtps_pd(_mm_loadu_ps(src + i));
    __m256d x1 = _mm256_cvtps_pd(_mm_loadu_ps(src + i + 4));
    acc0 = _mm256_fmadd_pd(x0, x0, acc0);
    acc1 = _mm256_fmadd_pd(x1, x1, acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < nf; ++i) {
    const double v = src[i];
    acc += v * v;
  }
  return acc;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  const std::size_t n = x.size();
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y.data() + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x.data() + i), vy);
    _mm256_storeu_pd(y.data() + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a.data() + i), _mm256_loadu_pd(b.data() + i));
    __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(a.data() + i + 4), _mm256_loadu_pd(b.data() + i + 4));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double dot(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a.data() + i), _mm256_loadu_pd(b.data() + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a.data() + i + 4), _mm256_loadu_pd(b.data() + i + 4), acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace csileak::kernels::avx2
