#include "csileak/restoration.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "csileak/error.hpp"
#include "csileak/kernels.hpp"

namespace csileak {

namespace {

constexpr int kBacktracks = 8;

int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

// Forward differences D x = (dx, dy); zero on the last column / row.
void diff(std::span<const double> x, int w, int h, std::vector<double>& dx, std::vector<double>& dy) {
  dx.assign(x.size(), 0.0);
  dy.assign(x.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(y) * w + c;
      if (c + 1 < w) dx[i] = x[i + 1] - x[i];
      if (y + 1 < h) dy[i] = x[i + w] - x[i];
    }
}

// D^T (px, py)
std::vector<double> diff_adjoint(const std::vector<double>& px, const std::vector<double>& py, int w, int h) {
  std::vector<double> out(px.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(y) * w + c;
      if (c + 1 < w) {
        out[i] -= px[i];
        out[i + 1] += px[i];
      }
      if (y + 1 < h) {
        out[i] -= py[i];
        out[i + w] += py[i];
      }
    }
  return out;
}

// argmin_x 1/2 ||x - z||^2 + mu TV(x) by projected gradient on the dual
// (|p| <= mu elementwise). p is warm-started across calls.
std::vector<double> tv_prox(std::span<const double> z, double mu, int w, int h, int iters, std::vector<double>& px,
                            std::vector<double>& py) {
  std::vector<double> x(z.begin(), z.end());
  if (mu <= 0.0) {
    std::fill(px.begin(), px.end(), 0.0);
    std::fill(py.begin(), py.end(), 0.0);
    return x;
  }
  constexpr double tau = 1.0 / 8.0;  // ||D||^2 <= 8
  std::vector<double> dx, dy;
  for (int it = 0; it < iters; ++it) {
    const auto dtp = diff_adjoint(px, py, w, h);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = z[i] - dtp[i];
    diff(x, w, h, dx, dy);
    for (std::size_t i = 0; i < x.size(); ++i) {
      px[i] = std::clamp(px[i] + tau * dx[i], -mu, mu);
      py[i] = std::clamp(py[i] + tau * dy[i], -mu, mu);
    }
  }
  const auto dtp = diff_adjoint(px, py, w, h);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = z[i] - dtp[i];
  return x;
}

}  // namespace

BlurKernel BlurKernel::blur3() {
  return BlurKernel{3, {1 / 16.0, 2 / 16.0, 1 / 16.0, 2 / 16.0, 4 / 16.0, 2 / 16.0, 1 / 16.0, 2 / 16.0, 1 / 16.0}};
}

void BlurKernel::validate() const {
  if (size < 1 || size % 2 == 0) throw Error("blur kernel: size must be odd and positive");
  if (taps.size() != static_cast<std::size_t>(size) * size) throw Error("blur kernel: expected size*size taps");
  double s = 0.0;
  for (double t : taps) {
    if (!std::isfinite(t)) throw Error("blur kernel: non-finite tap");
    s += t;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error("blur kernel: taps must sum to 1");
}

std::vector<double> ForwardModel::apply(std::span<const double> x, int w, int h) const {
  if (kind == ForwardKind::Identity) return {x.begin(), x.end()};
  const int r = kernel.size / 2;
  std::vector<double> out(x.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int ky = -r; ky <= r; ++ky)
        for (int kx = -r; kx <= r; ++kx)
          acc += kernel.taps[static_cast<std::size_t>(ky + r) * kernel.size + (kx + r)] *
                 x[static_cast<std::size_t>(reflect(y + ky, h)) * w + reflect(c + kx, w)];
      out[static_cast<std::size_t>(y) * w + c] = acc;
    }
  return out;
}

std::vector<double> ForwardModel::adjoint(std::span<const double> rsd, int w, int h) const {
  if (kind == ForwardKind::Identity) return {rsd.begin(), rsd.end()};
  const int r = kernel.size / 2;
  std::vector<double> out(rsd.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int c = 0; c < w; ++c) {
      const double v = rsd[static_cast<std::size_t>(y) * w + c];
      for (int ky = -r; ky <= r; ++ky)
        for (int kx = -r; kx <= r; ++kx)
          out[static_cast<std::size_t>(reflect(y + ky, h)) * w + reflect(c + kx, w)] +=
              kernel.taps[static_cast<std::size_t>(ky + r) * kernel.size + (kx + r)] * v;
    }
  return out;
}

double ForwardModel::norm_bound(int w, int h) const {
  if (kind == ForwardKind::Identity) return 1.0;
  double row = 0.0;
  for (double t : kernel.taps) row += std::abs(t);
  ForwardModel abs_model = *this;
  for (double& t : abs_model.kernel.taps) t = std::abs(t);
  const auto col = abs_model.adjoint(std::vector<double>(static_cast<std::size_t>(w) * h, 1.0), w, h);
  return row * *std::max_element(col.begin(), col.end());
}

void RestorationProblem::validate() const {
  for (double v : y.pixels())
    if (!std::isfinite(v)) throw Error("restore: non-finite input");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("restore: lambda must be finite and >= 0");
  if (!(noise_sigma_y >= 0.0)) throw Error("restore: noise sigma must be >= 0");
  if (iterations < 1) throw Error("restore: iterations must be positive");
  if (forward.kind == ForwardKind::Blur) forward.kernel.validate();
}

double total_variation(std::span<const double> x, int w, int h) {
  double tv = 0.0;
  for (int y = 0; y < h; ++y)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(y) * w + c;
      if (c + 1 < w) tv += std::abs(x[i + 1] - x[i]);
      if (y + 1 < h) tv += std::abs(x[i + w] - x[i]);
    }
  return tv;
}

double objective(std::span<const double> x, const RestorationProblem& p, const PriorSpec&) {
  const int w = p.y.width(), h = p.y.height();
  if (x.size() != p.y.size()) throw Error("objective: dimension mismatch");
  const auto fx = p.forward.apply(x, w, h);
  return kernels::squared_distance(fx, p.y.pixels()) + p.lambda * total_variation(x, w, h);
}

double objective(const GrayImage& x, const RestorationProblem& p, const PriorSpec& prior) {
  if (!x.same_shape(p.y)) throw Error("objective: dimension mismatch");
  return objective(x.pixels(), p, prior);
}

std::vector<double> data_gradient(std::span<const double> x, const RestorationProblem& p) {
  const int w = p.y.width(), h = p.y.height();
  auto r = p.forward.apply(x, w, h);
  const auto y = p.y.pixels();
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = 2.0 * (r[i] - y[i]);
  return p.forward.adjoint(r, w, h);
}

RestorationResult restore(const RestorationProblem& p, const PriorSpec& prior) {
  p.validate();
  if (prior.inner_iterations < 1) throw Error("restore: inner iterations must be positive");
  const int w = p.y.width(), h = p.y.height();
  const double lipschitz = 2.0 * p.forward.norm_bound(w, h);

  std::vector<double> x(p.y.pixels().begin(), p.y.pixels().end());
  std::vector<double> px(x.size(), 0.0), py(x.size(), 0.0);
  RestorationResult res{p.y, {objective(x, p, prior)}, 0};
  double fx = res.objective_trace.back();

  for (int it = 0; it < p.iterations; ++it) {
    const auto g = data_gradient(x, p);
    double step = 1.0 / lipschitz;
    int inner = prior.inner_iterations;
    bool accepted = false;
    double best_rise = 0.0;
    for (int bt = 0; bt < kBacktracks && !accepted; ++bt) {
      std::vector<double> z(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] - step * g[i];
      auto qx = px, qy = py;
      auto cand = tv_prox(z, step * p.lambda, w, h, inner, qx, qy);
      for (double& v : cand) v = std::clamp(v, 0.0, 1.0);
      const double fc = objective(cand, p, prior);
      if (!std::isfinite(fc)) throw Error("restore: objective became non-finite at iteration " + std::to_string(it));
      if (fc <= fx) {
        const bool stalled = fx - fc <= 1e-14 * std::max(1.0, fx);
        x = std::move(cand);
        px = std::move(qx);
        py = std::move(qy);
        fx = fc;
        res.objective_trace.push_back(fx);
        res.iterations = it + 1;
        accepted = true;
        if (stalled) it = p.iterations;  // converged
      } else {
        best_rise = bt == 0 ? fc - fx : std::min(best_rise, fc - fx);
        step *= 0.5;
        inner *= 2;
      }
    }
    if (!accepted) {
      if (best_rise > 1e-9 * std::max(1.0, fx)) {
        std::ostringstream os;
        os << "restore: objective increased by " << best_rise << " after backtracking at iteration " << it
           << "; trace:";
        for (double v : res.objective_trace) os << ' ' << v;
        throw Error(os.str());
      }
      break;
    }
  }
  res.image = GrayImage(w, h, std::move(x), p.y.bit_depth_hint());
  return res;
}

}  // namespace csileak
