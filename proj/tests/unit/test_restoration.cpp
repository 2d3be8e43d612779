#include <doctest.h>

#include <cmath>
#include <random>

#include "csileak/error.hpp"
#include "csileak/metrics.hpp"
#include "csileak/restoration.hpp"
#include "csileak/test_cards.hpp"
#include "oracles.hpp"

using namespace csileak;

namespace {

std::vector<double> rnd(std::mt19937& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

GrayImage noisy(const GrayImage& base, double sigma, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0, sigma);
  std::vector<double> px(base.pixels().begin(), base.pixels().end());
  for (auto& v : px) v = std::clamp(v + g(rng), 0.0, 1.0);
  return GrayImage(base.width(), base.height(), px);
}

}  // namespace

TEST_CASE("blur kernel") {
  const auto k = BlurKernel::blur3();
  CHECK(k.size == 3);
  CHECK(k.taps[4] == doctest::Approx(4.0 / 16));
  CHECK(k.taps[0] == doctest::Approx(1.0 / 16));
  CHECK_NOTHROW(k.validate());
  BlurKernel bad{3, std::vector<double>(9, 0.2)};
  CHECK_THROWS_AS(bad.validate(), Error);
  BlurKernel even{2, {0.25, 0.25, 0.25, 0.25}};
  CHECK_THROWS_AS(even.validate(), Error);
}

TEST_CASE("blur forward model matches the oracle and its adjoint") {
  std::mt19937 rng(4);
  const int w = 9, h = 7;
  const auto fm = ForwardModel::blur(BlurKernel::blur3());
  const auto x = rnd(rng, w * h), r = rnd(rng, w * h);
  const auto ax = fm.apply(x, w, h);
  const auto ref = oracle::blur(x, w, h, fm.kernel.taps, 3);
  for (std::size_t i = 0; i < ax.size(); ++i) CHECK(ax[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  const auto atr = fm.adjoint(r, w, h);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lhs += ax[i] * r[i];
    rhs += x[i] * atr[i];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  const auto id = ForwardModel::identity();
  CHECK(id.apply(x, w, h) == x);
  CHECK(id.adjoint(x, w, h) == x);
  CHECK(id.norm_bound(w, h) == doctest::Approx(1.0));
  CHECK(fm.norm_bound(w, h) >= 1.0 - 1e-12);
}

TEST_CASE("objective matches a direct evaluation") {
  std::mt19937 rng(8);
  const int w = 4, h = 4;
  const auto y = rnd(rng, 16), x = rnd(rng, 16);
  RestorationProblem p{GrayImage::filled(1, 1, 0.0)};
  p.y = GrayImage(w, h, y);
  p.lambda = 0.37;
  CHECK(total_variation(x, w, h) == doctest::Approx(oracle::tv(x, w, h)).epsilon(1e-12));
  const double direct = oracle::mse(x, y) * 16 + 0.37 * oracle::tv(x, w, h);
  CHECK(objective(x, p) == doctest::Approx(direct).epsilon(1e-12));
  CHECK(objective(GrayImage(w, h, x), p) == doctest::Approx(direct).epsilon(1e-12));
  // TV examples
  CHECK(total_variation(std::vector<double>{0, 1, 0, 1}, 2, 2) == doctest::Approx(2.0));
  CHECK(total_variation(std::vector<double>(16, 0.3), 4, 4) == 0.0);
}

TEST_CASE("data gradient matches finite differences") {
  std::mt19937 rng(15);
  const int w = 6, h = 5;
  for (auto fm : {ForwardModel::identity(), ForwardModel::blur(BlurKernel::blur3())}) {
    RestorationProblem p{GrayImage::filled(1, 1, 0.0)};
    p.y = GrayImage(w, h, rnd(rng, w * h));
    p.lambda = 0.0;
    p.forward = fm;
    const auto x = rnd(rng, w * h);
    const auto g = data_gradient(x, p);
    double worst = 0;
    for (int i = 0; i < w * h; ++i) {
      auto xp = x, xm = x;
      xp[i] += 1e-6;
      xm[i] -= 1e-6;
      const double fd = (objective(xp, p) - objective(xm, p)) / 2e-6;
      worst = std::max(worst, std::abs(fd - g[i]));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("restoration fixed points") {
  std::mt19937 rng(5);
  RestorationProblem p{GrayImage::filled(1, 1, 0.0)};
  p.y = GrayImage(8, 8, rnd(rng, 64));
  p.lambda = 0.0;
  const auto r = restore(p);
  for (std::size_t i = 0; i < 64; ++i) CHECK(r.image.pixels()[i] == doctest::Approx(p.y.pixels()[i]).epsilon(1e-12));

  p.y = GrayImage::filled(8, 8, 0.6);
  p.lambda = 0.5;
  const auto c = restore(p);
  for (double v : c.image.pixels()) CHECK(v == doctest::Approx(0.6).epsilon(1e-9));
}

TEST_CASE("restoration is monotone and denoises") {
  const auto clean = cards::print_card();
  const auto y = noisy(clean, 0.1, 3);
  for (auto fm : {ForwardModel::identity(), ForwardModel::blur(BlurKernel::blur3())}) {
    RestorationProblem p{GrayImage::filled(1, 1, 0.0)};
    p.y = y;
    p.lambda = 0.05;
    p.forward = fm;
    p.iterations = 60;
    const auto r = restore(p);
    REQUIRE(!r.objective_trace.empty());
    CHECK(r.iterations == static_cast<int>(r.objective_trace.size()) - 1);
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
      CHECK(r.objective_trace[i] <= r.objective_trace[i - 1] + 1e-12 * std::max(1.0, r.objective_trace[i - 1]));
    CHECK(objective(r.image, p) <= objective(y, p));
    for (double v : r.image.pixels()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    if (fm.kind == ForwardKind::Identity) CHECK(psnr(r.image, clean) > psnr(y, clean) + 2.0);
  }
}

TEST_CASE("restoration input validation") {
  RestorationProblem p{GrayImage::filled(1, 1, 0.0)};
  p.y = GrayImage::filled(4, 4, 0.5);
  p.lambda = -1;
  CHECK_THROWS_AS(restore(p), Error);
  p.lambda = 0.1;
  p.iterations = 0;
  CHECK_THROWS_AS(restore(p), Error);
  p.iterations = 5;
  p.forward = ForwardModel::blur(BlurKernel{3, std::vector<double>(9, 0.0)});
  CHECK_THROWS_AS(restore(p), Error);
}
