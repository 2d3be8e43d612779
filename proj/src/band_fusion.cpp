#include "csileak/band_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "csileak/error.hpp"
#include "csileak/kernels.hpp"

namespace csileak {

namespace {

constexpr int kMaxIterations = 500;
constexpr double kStepTolerance = 1e-8;

double median_of(std::vector<double> v) {
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  const double hi = v[m];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m)));
}

// Same stencil as metrics::gradient_magnitude, split into components.
void gradients(std::span<const double> img, int w, int h, std::vector<double>& gx, std::vector<double>& gy) {
  gx.assign(img.size(), 0.0);
  gy.assign(img.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (w > 1) {
        const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, w - 1);
        gx[i] = (img[static_cast<std::size_t>(y) * w + x1] - img[static_cast<std::size_t>(y) * w + x0]) / (x1 - x0);
      }
      if (h > 1) {
        const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, h - 1);
        gy[i] = (img[static_cast<std::size_t>(y1) * w + x] - img[static_cast<std::size_t>(y0) * w + x]) / (y1 - y0);
      }
    }
  }
}

}  // namespace

PixelMask PixelMask::filled(int width, int height, bool value) {
  return PixelMask{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, value ? 1 : 0)};
}

std::size_t PixelMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

PixelMask segment_uniform(const GrayImage& img, int window, double var_threshold) {
  if (window < 3 || window % 2 == 0) throw Error("segment_uniform: window must be odd and >= 3");
  const int w = img.width(), h = img.height();
  if (window > w || window > h)
    throw Error("segment_uniform: window " + std::to_string(window) + " larger than image " + std::to_string(w) +
                "x" + std::to_string(h));
  // Summed-area tables of x and x^2.
  const std::size_t sw = static_cast<std::size_t>(w) + 1;
  std::vector<double> s1(sw * (h + 1), 0.0), s2(sw * (h + 1), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = img.at(x, y);
      const std::size_t i = (y + 1) * sw + (x + 1);
      s1[i] = v + s1[i - 1] + s1[i - sw] - s1[i - sw - 1];
      s2[i] = v * v + s2[i - 1] + s2[i - sw] - s2[i - sw - 1];
    }
  auto box = [&](const std::vector<double>& s, int x0, int y0, int x1, int y1) {
    return s[y1 * sw + x1] - s[y0 * sw + x1] - s[y1 * sw + x0] + s[y0 * sw + x0];
  };
  const int r = window / 2;
  PixelMask m = PixelMask::filled(w, h, false);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(x - r, 0), x1 = std::min(x + r + 1, w);
      const int y0 = std::max(y - r, 0), y1 = std::min(y + r + 1, h);
      const double n = static_cast<double>((x1 - x0) * (y1 - y0));
      const double mean = box(s1, x0, y0, x1, y1) / n;
      const double var = std::max(0.0, box(s2, x0, y0, x1, y1) / n - mean * mean);
      m.bits[static_cast<std::size_t>(y) * w + x] = var < var_threshold ? 1 : 0;
    }
  return m;
}

GrayImage amplitude_threshold(const GrayImage& band, double tau, double sigma_est, const PixelMask* uniform) {
  if (!(tau >= 0.0) || !(sigma_est >= 0.0)) throw Error("amplitude_threshold: tau and sigma must be >= 0");
  const double cut = tau * sigma_est;
  if (cut == 0.0) return band;
  const auto px = band.pixels();
  double mu;
  if (uniform && uniform->count() > 0) {
    if (uniform->width != band.width() || uniform->height != band.height())
      throw Error("amplitude_threshold: mask dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < px.size(); ++i)
      if (uniform->bits[i]) s += px[i];
    mu = s / static_cast<double>(uniform->count());
  } else {
    mu = median_of(std::vector<double>(px.begin(), px.end()));
  }
  std::vector<double> out(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double d = px[i] - mu;
    const double mag = std::max(std::abs(d) - cut, 0.0);
    out[i] = std::clamp(mu + std::copysign(mag, d), 0.0, 1.0);
  }
  return GrayImage(band.width(), band.height(), std::move(out), band.bit_depth_hint());
}

double estimate_noise_sigma(const GrayImage& img) {
  std::vector<double> d;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 1; x < img.width(); ++x) d.push_back(img.at(x, y) - img.at(x - 1, y));
  if (d.empty()) return 0.0;
  const double med = median_of(d);
  for (double& v : d) v = std::abs(v - med);
  return median_of(d) / (0.6745 * std::sqrt(2.0));
}

void FusionProblem::validate() const {
  if (bands.empty()) throw Error("fuse: at least one band is required");
  for (const auto& b : bands)
    if (!b.same_shape(bands.front())) throw Error("fuse: bands differ in dimensions");
  if (uniform_mask.width != bands.front().width() || uniform_mask.height != bands.front().height() ||
      uniform_mask.bits.size() != bands.front().size())
    throw Error("fuse: uniform mask dimension mismatch");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("fuse: lambda must be finite and >= 0");
  if (!(tau >= 0.0)) throw Error("fuse: tau must be >= 0");
  if (!std::isfinite(v_target)) throw Error("fuse: v_target must be finite");
  if (uniform_mask.count() == 0) throw Error("fuse: no uniform region; supply v_target mask");
}

double default_v_target(std::span<const GrayImage> bands, const PixelMask& uniform) {
  if (bands.empty()) throw Error("default_v_target: no bands");
  if (uniform.count() == 0) throw Error("fuse: no uniform region; supply v_target mask");
  std::size_t best = 0;
  double best_e = -1.0;
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const double e = kernels::dot(bands[i].pixels(), bands[i].pixels());
    if (e > best_e) {
      best_e = e;
      best = i;
    }
  }
  std::vector<double> v;
  const auto px = bands[best].pixels();
  for (std::size_t i = 0; i < px.size(); ++i)
    if (uniform.bits[i]) v.push_back(px[i]);
  return median_of(v);
}

FusionObjective::FusionObjective(const FusionProblem& p) : v_target_(p.v_target), lambda_(p.lambda) {
  p.validate();
  const int w = p.bands.front().width(), h = p.bands.front().height();
  const std::size_t n = p.bands.front().size();
  std::vector<std::uint8_t> edge(n, 0);
  for (const auto& b : p.bands) {
    const GrayImage t = p.tau > 0.0 ? amplitude_threshold(b, p.tau, estimate_noise_sigma(b), &p.uniform_mask) : b;
    bands_.emplace_back(t.pixels().begin(), t.pixels().end());
    std::vector<double> gx, gy;
    gradients(bands_.back(), w, h, gx, gy);
    std::vector<double> mag(n);
    for (std::size_t i = 0; i < n; ++i) mag[i] = std::hypot(gx[i], gy[i]);
    std::vector<double> sorted = mag;
    std::sort(sorted.begin(), sorted.end());
    const double pos = 0.75 * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double q75 = lo + 1 < n ? sorted[lo] + (pos - lo) * (sorted[lo + 1] - sorted[lo]) : sorted[lo];
    for (std::size_t i = 0; i < n; ++i)
      if (mag[i] > q75) edge[i] = 1;
    gx_.push_back(std::move(gx));
    gy_.push_back(std::move(gy));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (p.uniform_mask.bits[i]) mask_idx_.push_back(i);
    if (edge[i]) edge_idx_.push_back(i);
  }
}

double FusionObjective::value(std::span<const double> a) const {
  double data = 0.0;
  for (std::size_t i : mask_idx_) {
    double v = -v_target_;
    for (std::size_t b = 0; b < bands_.size(); ++b) v += a[b] * bands_[b][i];
    data += v * v;
  }
  double phi = 0.0;
  if (lambda_ != 0.0 && !edge_idx_.empty()) {
    for (std::size_t i : edge_idx_) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t b = 0; b < bands_.size(); ++b) {
        gx += a[b] * gx_[b][i];
        gy += a[b] * gy_[b][i];
      }
      phi += std::hypot(gx, gy);
    }
    phi = -phi / static_cast<double>(edge_idx_.size());
  }
  const double j = data + lambda_ * phi;
  if (!std::isfinite(j)) throw Error("fuse: objective is not finite");
  return j;
}

std::vector<double> FusionObjective::gradient(std::span<const double> a) const {
  const std::size_t nb = bands_.size();
  std::vector<double> g(nb, 0.0);
  for (std::size_t i : mask_idx_) {
    double v = -v_target_;
    for (std::size_t b = 0; b < nb; ++b) v += a[b] * bands_[b][i];
    for (std::size_t b = 0; b < nb; ++b) g[b] += 2.0 * v * bands_[b][i];
  }
  if (lambda_ != 0.0 && !edge_idx_.empty()) {
    const double scale = -lambda_ / static_cast<double>(edge_idx_.size());
    for (std::size_t i : edge_idx_) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t b = 0; b < nb; ++b) {
        gx += a[b] * gx_[b][i];
        gy += a[b] * gy_[b][i];
      }
      const double m = std::hypot(gx, gy);
      if (m == 0.0) continue;
      for (std::size_t b = 0; b < nb; ++b) g[b] += scale * (gx * gx_[b][i] + gy * gy_[b][i]) / m;
    }
  }
  return g;
}

std::vector<double> project_simplex(std::span<const double> v) {
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cum += u[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

namespace {

struct Descent {
  std::vector<double> alpha;
  double value;
  int iterations;
};

Descent descend(const FusionObjective& f, std::vector<double> a, double step0) {
  double fa = f.value(a);
  double step = step0;
  int it = 0;
  for (; it < kMaxIterations; ++it) {
    const auto g = f.gradient(a);
    bool moved = false;
    double dist = 0.0;
    for (int bt = 0; bt < 60; ++bt) {
      std::vector<double> trial(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) trial[i] = a[i] - step * g[i];
      trial = project_simplex(trial);
      double lin = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = trial[i] - a[i];
        lin += g[i] * d;
        sq += d * d;
      }
      const double ft = f.value(trial);
      if (ft <= fa + lin + sq / (2.0 * step) && ft <= fa) {
        dist = std::sqrt(sq);
        moved = sq > 0.0;
        a = std::move(trial);
        fa = ft;
        break;
      }
      step *= 0.5;
    }
    if (!moved || dist < kStepTolerance) {
      ++it;
      break;
    }
    step *= 2.0;
  }
  return {std::move(a), fa, it};
}

}  // namespace

FusionResult fuse(const FusionProblem& p) {
  const FusionObjective f(p);
  const std::size_t nb = f.bands();

  double curvature = 0.0;
  for (const auto& b : f.thresholded()) curvature += kernels::dot(b, b);
  const double step0 = 1.0 / (2.0 * curvature + 1.0);

  std::vector<std::vector<double>> starts;
  starts.emplace_back(nb, 1.0 / static_cast<double>(nb));
  const double uniform_value = f.value(starts.front());
  for (std::size_t i = 0; i < nb; ++i) {
    std::vector<double> e(nb, 0.0);
    e[i] = 1.0;
    if (nb > 1 && f.value(e) < uniform_value) starts.push_back(std::move(e));
  }

  Descent best{{}, std::numeric_limits<double>::infinity(), 0};
  int total_iters = 0;
  for (auto& s : starts) {
    auto d = descend(f, std::move(s), step0);
    total_iters += d.iterations;
    if (d.value < best.value) best = std::move(d);
  }
  for (std::size_t i = 0; i < nb; ++i) {
    std::vector<double> e(nb, 0.0);
    e[i] = 1.0;
    const double fe = f.value(e);
    if (fe < best.value) best = Descent{std::move(e), fe, 0};
  }

  const std::size_t n = p.bands.front().size();
  std::vector<double> img(n, 0.0);
  for (std::size_t b = 0; b < nb; ++b) kernels::axpy(best.alpha[b], f.thresholded()[b], img);
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  return FusionResult{GrayImage(p.bands.front().width(), p.bands.front().height(), std::move(img)),
                      std::move(best.alpha), best.value, total_iters};
}

}  // namespace csileak
