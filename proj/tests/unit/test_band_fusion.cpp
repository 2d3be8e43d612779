#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "csileak/band_fusion.hpp"
#include "csileak/error.hpp"
#include "csileak/test_cards.hpp"

using namespace csileak;

namespace {

GrayImage noisy(const GrayImage& base, double sigma, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0, sigma);
  std::vector<double> px(base.pixels().begin(), base.pixels().end());
  for (auto& v : px) v = std::clamp(v + g(rng), 0.0, 1.0);
  return GrayImage(base.width(), base.height(), px);
}

FusionProblem random_problem(std::mt19937& rng, int nb, double lambda) {
  std::uniform_real_distribution<double> u(0, 1);
  FusionProblem p;
  const int w = 24, h = 24;
  for (int b = 0; b < nb; ++b) {
    std::vector<double> px(w * h);
    const double gain = u(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        px[y * w + x] = x < w / 2 ? gain : std::clamp(0.5 + 0.4 * std::sin(0.3 * (b + 1) * x * y) * u(rng), 0.0, 1.0);
    p.bands.emplace_back(w, h, px);
  }
  p.uniform_mask = PixelMask::filled(w, h, false);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w / 2; ++x) p.uniform_mask.bits[y * w + x] = 1;
  p.v_target = u(rng);
  p.lambda = lambda;
  return p;
}

}  // namespace

TEST_CASE("uniform-region segmentation") {
  const auto flat = GrayImage::filled(16, 16, 0.4);
  CHECK(segment_uniform(flat, 5, 1e-6).count() == 256);
  const auto chk = cards::checkerboard_card(16, 16, 1, 0.0, 1.0);
  CHECK(segment_uniform(chk, 3, 0.01).count() == 0);
  const auto half = cards::half_flat_card(32, 32);
  const auto m = segment_uniform(half, 5, 1e-3);
  CHECK(m.at(3, 16));
  CHECK_FALSE(m.at(28, 16));
  CHECK_THROWS_AS(segment_uniform(flat, 4, 0.1), Error);
  CHECK_THROWS_AS(segment_uniform(flat, 1, 0.1), Error);
  CHECK_THROWS_AS(segment_uniform(flat, 17, 0.1), Error);
}

TEST_CASE("noise estimate and amplitude threshold") {
  const auto img = noisy(GrayImage::filled(64, 64, 0.5), 0.05, 4);
  const double s = estimate_noise_sigma(img);
  CHECK(s == doctest::Approx(0.05).epsilon(0.1));

  const auto same = amplitude_threshold(img, 0.0, s);
  CHECK(same == img);

  const auto mask = PixelMask::filled(64, 64, true);
  const auto t = amplitude_threshold(img, 2.0, 0.05, &mask);
  double mu = 0;
  for (double v : img.pixels()) mu += v;
  mu /= img.size();
  std::size_t at_mu = 0;
  for (double v : t.pixels()) at_mu += std::abs(v - mu) < 1e-12;
  const double frac = static_cast<double>(at_mu) / t.size();
  CHECK(frac > 0.93);
  CHECK(frac < 0.975);

  // an outlier keeps its sign and loses the cut
  std::vector<double> px(16, 0.5);
  px[3] = 0.9;
  const auto o = amplitude_threshold(GrayImage(4, 4, px), 1.0, 0.1);
  CHECK(o.pixels()[3] == doctest::Approx(0.8));
  CHECK(o.pixels()[0] == 0.5);
  CHECK_THROWS_AS(amplitude_threshold(img, -1.0, 0.1), Error);
}

TEST_CASE("simplex projection") {
  CHECK(project_simplex(std::vector<double>{0.5, 0.5}) == std::vector<double>{0.5, 0.5});
  CHECK(project_simplex(std::vector<double>{2.0, 0.0}) == std::vector<double>{1.0, 0.0});
  const auto z = project_simplex(std::vector<double>{0.0, 0.0, 0.0});
  for (double v : z) CHECK(v == doctest::Approx(1.0 / 3));
  std::mt19937 rng(1);
  std::normal_distribution<double> g(0, 2);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> v(5);
    for (auto& x : v) x = g(rng);
    const auto p = project_simplex(v);
    double s = 0;
    for (double x : p) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("objective gradient matches finite differences") {
  std::mt19937 rng(9);
  for (int t = 0; t < 5; ++t) {
    const auto p = random_problem(rng, 3, 0.3);
    const FusionObjective f(p);
    std::vector<double> a{0.2, 0.5, 0.3};
    const auto g = f.gradient(a);
    for (int i = 0; i < 3; ++i) {
      auto ap = a, am = a;
      ap[i] += 1e-6;
      am[i] -= 1e-6;
      const double fd = (f.value(ap) - f.value(am)) / 2e-6;
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
  }
}

TEST_CASE("single and identical bands") {
  std::mt19937 rng(3);
  auto p = random_problem(rng, 1, 0.1);
  const auto r = fuse(p);
  CHECK(r.alpha == std::vector<double>{1.0});
  CHECK(r.image == p.bands[0]);

  p.bands = {p.bands[0], p.bands[0], p.bands[0]};
  const auto s = fuse(p);
  for (std::size_t i = 0; i < s.image.size(); ++i) CHECK(s.image.pixels()[i] == doctest::Approx(p.bands[0].pixels()[i]));
}

TEST_CASE("fused objective never loses to a single band") {
  std::mt19937 rng(17);
  for (int t = 0; t < 40; ++t) {
    const auto p = random_problem(rng, 2 + t % 4, 0.05 * (t % 5));
    const FusionObjective f(p);
    const auto r = fuse(p);
    double best_vertex = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < p.bands.size(); ++i) {
      std::vector<double> e(p.bands.size(), 0.0);
      e[i] = 1.0;
      best_vertex = std::min(best_vertex, f.value(e));
    }
    CHECK(r.objective <= best_vertex + 1e-9);
    CHECK(r.objective == doctest::Approx(f.value(r.alpha)));
  }
}

TEST_CASE("least-squares optimum without the edge term") {
  const int w = 16, h = 16;
  const auto b1 = noisy(GrayImage::filled(w, h, 0.8), 0.05, 1);
  const auto b2 = noisy(GrayImage::filled(w, h, 0.2), 0.05, 2);
  FusionProblem p;
  p.bands = {b1, b2};
  p.uniform_mask = PixelMask::filled(w, h, true);
  p.v_target = 0.45;
  p.lambda = 0.0;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < b1.size(); ++i) {
    const double d = b1.pixels()[i] - b2.pixels()[i];
    num += (p.v_target - b2.pixels()[i]) * d;
    den += d * d;
  }
  const double a_star = num / den;
  REQUIRE(a_star > 0.1);
  REQUIRE(a_star < 0.9);
  const auto r = fuse(p);
  CHECK(std::abs(r.alpha[0] - a_star) < 1e-6);
  CHECK(std::abs(r.alpha[1] - (1 - a_star)) < 1e-6);
}

TEST_CASE("band order does not matter and runs are reproducible") {
  std::mt19937 rng(23);
  auto p = random_problem(rng, 3, 0.1);
  const auto a = fuse(p);
  const auto b = fuse(p);
  CHECK(std::memcmp(a.alpha.data(), b.alpha.data(), a.alpha.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(a.image.pixels().data(), b.image.pixels().data(), a.image.size() * sizeof(double)) == 0);

  auto q = p;
  q.bands = {p.bands[2], p.bands[0], p.bands[1]};
  const auto c = fuse(q);
  CHECK(c.objective == doctest::Approx(a.objective).epsilon(1e-9));
  CHECK(c.alpha[0] == doctest::Approx(a.alpha[2]).epsilon(1e-5).scale(1));
  CHECK(c.alpha[1] == doctest::Approx(a.alpha[0]).epsilon(1e-5).scale(1));
}

TEST_CASE("fusion input validation") {
  std::mt19937 rng(2);
  auto p = random_problem(rng, 2, 0.1);
  p.uniform_mask = PixelMask::filled(24, 24, false);
  CHECK_THROWS_WITH_AS(fuse(p), "fuse: no uniform region; supply v_target mask", Error);
  CHECK_THROWS_AS(default_v_target(p.bands, p.uniform_mask), Error);
  p.uniform_mask = PixelMask::filled(24, 24, true);
  p.bands.push_back(GrayImage::filled(8, 8, 0.0));
  CHECK_THROWS_AS(fuse(p), Error);
  p.bands.pop_back();
  p.lambda = -1;
  CHECK_THROWS_AS(fuse(p), Error);
  p.lambda = 0.1;
  p.bands = {GrayImage::filled(24, 24, 0.2), GrayImage::filled(24, 24, 0.9)};
  CHECK(default_v_target(p.bands, p.uniform_mask) == doctest::Approx(0.9));
}
