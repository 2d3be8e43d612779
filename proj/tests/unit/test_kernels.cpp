#include <doctest.h>

#include <cstring>
#include <random>
#include <vector>

#include "csileak/error.hpp"
#include "csileak/fft.hpp"
#include "csileak/kernels.hpp"
#include "oracles.hpp"

using namespace csileak;
namespace k = csileak::kernels;

TEST_CASE("dispatch reports a supported ISA") {
  CHECK(k::isa_supported(k::Isa::Scalar));
  CHECK(k::isa_supported(k::active_isa()));
  CHECK(k::isa_name(k::Isa::Scalar) == "scalar");
  k::force_isa(k::Isa::Scalar);
  CHECK(k::active_isa() == k::Isa::Scalar);
  k::reset_isa();
  if (!k::isa_supported(k::Isa::Avx2)) CHECK_THROWS_AS(k::force_isa(k::Isa::Avx2), Error);
}

#if defined(__x86_64__)
TEST_CASE("AVX2 kernels agree with the scalar reference") {
  if (!k::isa_supported(k::Isa::Avx2)) {
    MESSAGE("AVX2 not available on this CPU; equivalence not exercised");
    return;
  }
  std::mt19937 rng(1234);
  std::normal_distribution<double> g;
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 15u, 16u, 17u, 31u, 64u, 1000u, 4099u}) {
    CAPTURE(n);
    std::vector<std::complex<float>> c(n);
    for (auto& v : c) v = {static_cast<float>(g(rng)), static_cast<float>(g(rng))};
    std::vector<float> m1(n), m2(n);
    k::scalar::magnitude(c, m1);
    k::avx2::magnitude(c, m2);
    CHECK(std::memcmp(m1.data(), m2.data(), n * sizeof(float)) == 0);

    const double e1 = k::scalar::energy(c), e2 = k::avx2::energy(c);
    CHECK(e2 == doctest::Approx(e1).epsilon(1e-12));

    std::vector<double> a(n), b(n);
    for (auto& v : a) v = g(rng);
    for (auto& v : b) v = g(rng);
    CHECK(k::avx2::dot(a, b) == doctest::Approx(k::scalar::dot(a, b)).epsilon(1e-12));
    CHECK(k::avx2::squared_distance(a, b) == doctest::Approx(k::scalar::squared_distance(a, b)).epsilon(1e-12));
    auto y1 = b, y2 = b;
    k::scalar::axpy(0.37, a, y1);
    k::avx2::axpy(0.37, a, y2);
    for (std::size_t i = 0; i < n; ++i) CHECK(y2[i] == doctest::Approx(y1[i]).epsilon(1e-15));
  }
}
#endif

TEST_CASE("kernels compute their definitions") {
  std::vector<std::complex<float>> c{{3, 4}, {0, 0}, {-1, 0}};
  std::vector<float> m(3);
  k::magnitude(c, m);
  CHECK(m[0] == 5.0f);
  CHECK(m[1] == 0.0f);
  CHECK(m[2] == 1.0f);
  CHECK(k::energy(c) == 26.0);
  std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  CHECK(k::dot(a, b) == 32.0);
  CHECK(k::squared_distance(a, b) == 27.0);
  k::axpy(2.0, a, b);
  CHECK(b == std::vector<double>{6, 9, 12});
}

TEST_CASE("FFT autocorrelation matches the direct sum") {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t n : {1u, 2u, 5u, 64u, 333u}) {
    std::vector<double> x(n);
    for (auto& v : x) v = u(rng);
    const std::size_t lag = n > 1 ? n - 1 : 0;
    const auto r = autocorrelation(x, lag);
    const auto ref = oracle::autocorr(x, lag);
    REQUIRE(r.size() == ref.size());
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i] == doctest::Approx(ref[i]).epsilon(1e-9));
  }
}

TEST_CASE("FFT forward/inverse round trip") {
  std::vector<cplx> x{{1, 0}, {2, -1}, {0, 3}, {-4, 0.5}, {0.25, 0}};
  auto y = x;
  fft_inplace(y, false);
  fft_inplace(y, true);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(y[i].real() / 5.0 == doctest::Approx(x[i].real()));
    CHECK(y[i].imag() / 5.0 == doctest::Approx(x[i].imag()));
  }
}
