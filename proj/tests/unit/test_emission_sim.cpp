#include <doctest.h>

#include <cmath>
#include <cstring>

#include "csileak/csi2_codec.hpp"
#include "csileak/emission_sim.hpp"
#include "csileak/error.hpp"
#include "csileak/kernels.hpp"
#include "csileak/test_cards.hpp"

using namespace csileak;

namespace {

struct Setup {
  LineTiming timing;
  PacketStream stream;
};

Setup make(const std::vector<GrayImage>& frames, Schedule s = Schedule::Single) {
  const auto t = LineTiming::defaults_for_width(frames.front().width());
  return {t, packetize(frames, t, s)};
}

std::vector<float> env_of(const IqTrace& t) {
  std::vector<float> e(t.size());
  kernels::magnitude(t.samples(), e);
  return e;
}

}  // namespace

TEST_CASE("band edges are validated") {
  auto st = make({GrayImage::filled(8, 2, 0.5)});
  EmissionConfig c;
  c.bands = {{10e6, 120e6}};
  CHECK_THROWS_WITH_AS(simulate_band(st.stream, st.timing, c, 0), doctest::Contains("Nyquist"), Error);
  c.bands = {{30e6, 20e6}};
  CHECK_THROWS_AS(simulate_band(st.stream, st.timing, c, 0), Error);
  c.bands = {{10e6, 20e6}};
  CHECK_THROWS_AS(simulate_band(st.stream, st.timing, c, 3), Error);
  c.noise_sigma = -1;
  CHECK_THROWS_AS(simulate_band(st.stream, st.timing, c, 0), Error);
}

TEST_CASE("bitgroup: zero image emits nothing") {
  auto st = make({GrayImage::filled(8, 4, 0.0)});
  EmissionConfig c;
  c.bands = {{10e6, 20e6, 1, 1}};
  const auto tr = simulate_band(st.stream, st.timing, c, 0);
  for (auto s : tr.samples()) CHECK(s == Sample(0, 0));
  CHECK(tr.center_frequency_hz() == 15e6);
}

TEST_CASE("bitgroup: MSB-only band cannot see LSB differences") {
  const double a = 0b1111111100 / 1023.0, b = 0b1111111111 / 1023.0;
  auto s1 = make({GrayImage(4, 1, {a, a, a, a}, 10)});
  auto s2 = make({GrayImage(4, 1, {b, b, b, b}, 10)});
  EmissionConfig c;
  c.bands = {{10e6, 20e6, 1, 0}, {40e6, 50e6, 0, 1}};
  const auto t1 = simulate_all(s1.stream, s1.timing, c);
  const auto t2 = simulate_all(s2.stream, s2.timing, c);
  CHECK(std::memcmp(t1[0].samples().data(), t2[0].samples().data(), t1[0].size() * sizeof(Sample)) == 0);
  CHECK(std::memcmp(t1[1].samples().data(), t2[1].samples().data(), t1[1].size() * sizeof(Sample)) != 0);
}

TEST_CASE("bitgroup: LSB band depends only on the two LSBs") {
  auto card = cards::ramp_card(16, 4, 7.0);
  std::vector<double> edited(card.pixels().begin(), card.pixels().end());
  for (auto& v : edited) {
    auto p = static_cast<int>(std::lround(v * 1023));
    p = (p & 3) | ((~p & 0xFF) << 2);  // change every MSB, keep LSBs
    v = p / 1023.0;
  }
  auto s1 = make({card});
  auto s2 = make({GrayImage(16, 4, edited, 10)});
  EmissionConfig c;
  c.bands = {{40e6, 50e6, 0, 1}};
  const auto t1 = simulate_band(s1.stream, s1.timing, c, 0);
  const auto t2 = simulate_band(s2.stream, s2.timing, c, 0);
  CHECK(std::memcmp(t1.samples().data(), t2.samples().data(), t1.size() * sizeof(Sample)) == 0);
}

TEST_CASE("noise statistics and determinism") {
  auto st = make({GrayImage::filled(64, 64, 0.0)});
  EmissionConfig c;
  c.bands = {{10e6, 20e6}, {30e6, 40e6}};
  c.noise_sigma = 0.1;
  c.seed = 99;
  const auto a = simulate_all(st.stream, st.timing, c);
  const auto b = simulate_all(st.stream, st.timing, c);
  for (int i = 0; i < 2; ++i)
    CHECK(std::memcmp(a[i].samples().data(), b[i].samples().data(), a[i].size() * sizeof(Sample)) == 0);
  // bands carry independent noise
  CHECK(std::memcmp(a[0].samples().data(), a[1].samples().data(), a[0].size() * sizeof(Sample)) != 0);
  REQUIRE(a[0].size() >= 10000);
  double mean_re = 0, mean_im = 0;
  const std::size_t n = 10000;
  for (std::size_t i = 0; i < n; ++i) {
    mean_re += a[0].samples()[i].real();
    mean_im += a[0].samples()[i].imag();
  }
  mean_re /= n;
  mean_im /= n;
  double var = 0;
  for (std::size_t i = 0; i < n; ++i) var += std::norm(std::complex<double>(a[0].samples()[i]) - std::complex<double>(mean_re, mean_im));
  var /= (n - 1);
  CHECK(var == doctest::Approx(2 * 0.01).epsilon(0.1));
  // simulate_band(i) is the sub-band capture of band i
  const auto sub = simulate_subband(st.stream, st.timing, c, 30e6, 40e6);
  CHECK(std::memcmp(sub.samples().data(), a[1].samples().data(), sub.size() * sizeof(Sample)) == 0);
}

TEST_CASE("clock offset lifts blanking") {
  auto st = make({GrayImage::filled(8, 2, 0.8)});
  EmissionConfig c;
  c.bands = {{10e6, 20e6}};
  c.clock_offset = 0.25;
  const auto tr = simulate_band(st.stream, st.timing, c, 0);
  CHECK(tr.samples()[0].real() == doctest::Approx(0.25));
  const auto starts = expected_frame_starts(st.stream, st.timing, c);
  const auto mid = static_cast<std::size_t>(starts[0] + 5);
  CHECK(tr.samples()[mid].real() == doctest::Approx(0.25 + (818 >> 2) / 255.0));
}

TEST_CASE("drift stretches the sample grid") {
  std::vector<GrayImage> frames(6, GrayImage::filled(16, 8, 0.5));
  auto st = make(frames);
  EmissionConfig c;
  c.bands = {{10e6, 20e6}};
  const auto nominal = expected_frame_starts(st.stream, st.timing, c);
  c.drift_ppm = 200;
  const auto drifted = expected_frame_starts(st.stream, st.timing, c);
  const double frame = bits_per_frame(st.timing, 16, 8) / (st.timing.bit_rate_hz / c.sdr_sample_rate_hz);
  for (std::size_t k = 1; k < nominal.size(); ++k) {
    const double dev = nominal[k] - drifted[k] - (nominal[0] - drifted[0]);
    CHECK(dev == doctest::Approx(k * frame * 200e-6).epsilon(0.02));
  }
  CHECK(bits_per_sample(st.timing, c) == doctest::Approx(2.0 * (1 + 200e-6)));
}

TEST_CASE("NRZ: fundamental band carries far more payload energy than a guard band") {
  std::vector<GrayImage> frames{cards::checkerboard_card(32, 8, 1, 0.0, 1.0)};
  auto st = make(frames);
  EmissionConfig c;
  c.mode = EmissionMode::NrzPhysical;
  // 0xFF 0x00 bytes repeat every 16 bits: a 12.5 MHz square wave with no even harmonics
  c.bands = {{11e6, 14e6}, {24e6, 26e6}};
  const auto tr = simulate_all(st.stream, st.timing, c);
  const double e0 = kernels::energy(tr[0].samples());
  const double e1 = kernels::energy(tr[1].samples());
  CHECK(e0 >= 10 * e1);
}

TEST_CASE("NRZ: a constant bit stream has no in-band energy") {
  LineTiming t{200e6, 16, 32, 0, 0};
  auto s = packetize(std::vector<GrayImage>{GrayImage::filled(8, 2, 0.0)}, t, Schedule::Single);
  EmissionConfig c;
  c.mode = EmissionMode::NrzPhysical;
  c.bands = {{0.0, 50e6}};
  const auto e = env_of(simulate_band(s, t, c, 0));
  for (float v : e) CHECK(v < 1e-9f);
}
