#include <doctest.h>

#include <cmath>
#include <random>

#include "csileak/error.hpp"
#include "csileak/metrics.hpp"
#include "oracles.hpp"

using namespace csileak;

namespace {

GrayImage random_image(std::mt19937& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> px(static_cast<std::size_t>(w) * h);
  for (auto& v : px) v = u(rng);
  return GrayImage(w, h, px);
}

std::vector<double> vec(const GrayImage& g) { return {g.pixels().begin(), g.pixels().end()}; }

}  // namespace

TEST_CASE("psnr examples") {
  const auto a = GrayImage::filled(8, 8, 0.0);
  const auto b = GrayImage::filled(8, 8, 1.0);
  CHECK(psnr(a, a) == kPsnrIdentical);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, b) == doctest::Approx(0.0));
  CHECK(psnr(a, GrayImage::filled(8, 8, 0.1)) == doctest::Approx(20.0));
  CHECK_THROWS_AS(psnr(a, GrayImage::filled(8, 7, 0.0)), Error);
}

TEST_CASE("psnr and ssim agree with direct oracles") {
  std::mt19937 rng(12);
  for (int i = 0; i < 10; ++i) {
    const auto a = random_image(rng, 24, 20);
    const auto b = random_image(rng, 24, 20);
    CHECK(psnr(a, b) == doctest::Approx(oracle::psnr(vec(a), vec(b))).epsilon(1e-9));
    CHECK(ssim(a, b) == doctest::Approx(oracle::ssim(vec(a), vec(b), 24, 20)).epsilon(1e-9));
  }
}

TEST_CASE("ssim properties") {
  std::mt19937 rng(2);
  const auto a = random_image(rng, 32, 32);
  const auto b = random_image(rng, 32, 32);
  CHECK(ssim(a, a) == doctest::Approx(1.0));
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  std::vector<double> inv;
  for (double v : a.pixels()) inv.push_back(1.0 - v);
  CHECK(ssim(a, GrayImage(32, 32, inv)) < 0.5);
  CHECK_THROWS_AS(ssim(GrayImage::filled(8, 8, 0), GrayImage::filled(8, 8, 0)), Error);
  SsimParams p;
  p.window = 4;
  CHECK_THROWS_AS(ssim(a, b, p), Error);
}

TEST_CASE("psnr falls as noise grows") {
  std::mt19937 rng(5);
  const auto clean = random_image(rng, 32, 32);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> z(clean.size());
  for (auto& v : z) v = n(rng);
  double prev = kPsnrIdentical;
  for (double s : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    std::vector<double> px(clean.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = clean.pixels()[i] + s * z[i];
    const double q = psnr(GrayImage(32, 32, px), clean);
    CHECK(q < prev);
    prev = q;
  }
}

TEST_CASE("entropy and edge intensity") {
  CHECK(image_entropy(GrayImage::filled(8, 8, 0.3)) == 0.0);
  std::vector<double> half(64);
  for (int i = 0; i < 64; ++i) half[i] = i < 32 ? 0.0 : 1.0;
  const GrayImage h(8, 8, half);
  CHECK(image_entropy(h) == doctest::Approx(std::log(2.0)));
  CHECK(edge_intensity(GrayImage::filled(8, 8, 0.7)) == 0.0);
  // a horizontal ramp of slope 1/7 per pixel
  std::vector<double> ramp(64);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) ramp[y * 8 + x] = x / 7.0;
  CHECK(edge_intensity(GrayImage(8, 8, ramp)) == doctest::Approx(1.0 / 7.0));
  const auto r = compare(GrayImage(16, 16, std::vector<double>(256, 0.5)), GrayImage::filled(16, 16, 0.5));
  CHECK(r.ssim == doctest::Approx(1.0));
  CHECK(r.psnr_db == kPsnrIdentical);
}
