#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "csileak/band_locator.hpp"
#include "csileak/error.hpp"
#include "csileak/test_cards.hpp"
#include "scene.hpp"

using namespace csileak;

namespace {

IqTrace tone(std::size_t n, int bin, double amp = 1.0) {
  std::vector<Sample> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ph = 2 * std::numbers::pi * bin * static_cast<double>(i) / n;
    s[i] = Sample(static_cast<float>(amp * std::cos(ph)), static_cast<float>(amp * std::sin(ph)));
  }
  return IqTrace(std::move(s), 100e6);
}

IqTrace noise(std::size_t n, double sigma, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> g(0.0f, static_cast<float>(sigma));
  std::vector<Sample> s(n);
  for (auto& v : s) v = Sample(g(rng), g(rng));
  return IqTrace(std::move(s), 100e6);
}

}  // namespace

TEST_CASE("band statistics examples") {
  const auto z = band_stats(IqTrace(std::vector<Sample>(256), 100e6));
  CHECK(z.energy == 0.0);
  CHECK(z.spectral_entropy == 0.0);
  CHECK(z.autocorr_peak == 0.0);

  const auto t = band_stats(tone(256, 5, 2.0));
  CHECK(t.energy == doctest::Approx(256 * 4.0));
  CHECK(t.spectral_entropy == doctest::Approx(0.0).epsilon(1e-6));

  const auto w = band_stats(noise(4096, 1.0, 3));
  CHECK(w.spectral_entropy > std::log(4096.0) - 1.0);
  CHECK(w.spectral_entropy <= std::log(4096.0));
  CHECK(w.autocorr_peak < 0.2);

  // on/off keyed carrier with a period of 40 samples
  std::vector<Sample> sq(4000);
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = Sample((i / 20) % 2 ? 1.0f : 0.0f, 0.0f);
  const auto s = band_stats(IqTrace(sq, 100e6));
  CHECK(s.autocorr_peak >= 0.9);
  CHECK(s.autocorr_peak <= 1.0);
}

TEST_CASE("stage predicates") {
  BandStats s{0, 0, 10.0, 3.0, 0.5};
  Thresholds t;
  CHECK(passes_stage1(s, t));
  t.theta_E = 10.0;  // strict
  CHECK_FALSE(passes_stage1(s, t));
  t = Thresholds{};
  t.theta_H = 3.0;
  CHECK_FALSE(passes_stage1(s, t));
  t = Thresholds{};
  CHECK(passes_stage2(ImageStats{1.0, 0.05}, t));
  CHECK_FALSE(passes_stage2(ImageStats{0.4, 0.05}, t));
  CHECK_FALSE(passes_stage2(ImageStats{1.0, 0.005}, t));
  CHECK(passes_stage2(ImageStats{0.0, 0.0}, Thresholds::vacuous()));
  CHECK(std::string(verdict_name(Verdict::Accepted)) == "ACCEPTED");
  CHECK(std::string(verdict_name(Verdict::RejectedStage1)) == "REJECTED_STAGE1");
  CHECK(std::string(verdict_name(Verdict::RejectedStage2)) == "REJECTED_STAGE2");
}

TEST_CASE("tightening a threshold never admits a band") {
  std::mt19937 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 500; ++i) {
    BandStats s{0, 0, u(rng), u(rng) * 8, u(rng)};
    Thresholds a{u(rng), u(rng), u(rng) * 8, 0, 0};
    Thresholds b = a;
    b.theta_E += u(rng) * 0.2;
    b.theta_A += u(rng) * 0.2;
    b.theta_H -= u(rng);
    if (passes_stage1(s, b)) CHECK(passes_stage1(s, a));
  }
}

TEST_CASE("calibration picks the stated percentiles") {
  std::vector<IqTrace> caps;
  for (int i = 0; i <= 10; ++i) caps.push_back(IqTrace(std::vector<Sample>(16, Sample(std::sqrt(i / 16.0f), 0)), 1e6));
  Thresholds base;
  base.theta_edge = 0.123;
  const auto t = calibrate_thresholds(caps, base);
  CHECK(t.theta_E == doctest::Approx(9.0));
  CHECK(t.theta_A == 0.0);
  CHECK(t.theta_H == doctest::Approx(0.0));
  CHECK(t.theta_edge == 0.123);
  CHECK_THROWS_AS(calibrate_thresholds(std::vector<IqTrace>{}), Error);
}

TEST_CASE("vacuous thresholds accept every reconstructable band") {
  const auto card = cards::print_card();
  const auto sc = scene::make({card, card, card}, Schedule::Single, {{20e6, 30e6, 1, 0}}, 0.02, 0, 8);
  ReconParams rp;
  const auto reports = scan([&](double lo, double hi) { return simulate_subband(sc.stream, sc.timing, sc.config, lo, hi); },
                            20e6, 30e6, 10e6, Thresholds::vacuous(), rp);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].verdict == Verdict::Accepted);
  REQUIRE(reports[0].image_stats);
}

TEST_CASE("scan isolates the leaking band") {
  const auto card = cards::print_card();
  std::vector<GrayImage> frames(4, card);
  const auto sc = scene::make(frames, Schedule::Single, {{30e6, 35e6, 1, 0}}, 0.05, 0, 12);
  auto quiet = sc;
  quiet.config.bands.clear();
  std::vector<IqTrace> cal;
  for (int i = 0; i < 8; ++i)
    cal.push_back(simulate_subband(quiet.stream, quiet.timing, quiet.config, 60e6 + i * 1e6, 60e6 + (i + 1) * 1e6));
  const auto thr = calibrate_thresholds(cal);
  ReconParams rp;
  rp.raster.frames_to_average = 4;
  int failed_calls = 0;
  const auto reports = scan(
      [&](double lo, double hi) {
        if (lo == 45e6) {
          ++failed_calls;
          throw Error("tuner unavailable");
        }
        return simulate_subband(sc.stream, sc.timing, sc.config, lo, hi);
      },
      0.0, 52e6, 5e6, thr, rp);
  REQUIRE(reports.size() == 10);
  CHECK(failed_calls == 1);
  for (const auto& r : reports) {
    CAPTURE(r.stats.f_low_hz);
    if (r.stats.f_low_hz == 30e6)
      CHECK(r.verdict == Verdict::Accepted);
    else
      CHECK(r.verdict != Verdict::Accepted);
    CHECK(r.stats.f_high_hz - r.stats.f_low_hz == 5e6);
  }
  CHECK(reports[9].verdict == Verdict::RejectedStage1);
  CHECK(reports[9].diagnostic.find("tuner unavailable") != std::string::npos);
  CHECK_FALSE(reports[9].image_stats);
  CHECK_THROWS_AS(scan([&](double, double) { return cal[0]; }, 0, 1, 0, thr, rp), Error);
}
