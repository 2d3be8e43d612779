#include "csileak/metrics.hpp"

#include <cmath>
#include <vector>

#include "csileak/error.hpp"
#include "csileak/kernels.hpp"

namespace csileak {

namespace {

void require_same_shape(const GrayImage& a, const GrayImage& b, const char* what) {
  if (!a.same_shape(b))
    throw Error(std::string(what) + ": dimension mismatch (" + std::to_string(a.width()) + "x" +
                std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                std::to_string(b.height()) + ")");
}

std::vector<double> gaussian_taps(int window, double sigma) {
  std::vector<double> g(window);
  const double c = (window - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    g[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Separable "valid" filtering: output is (w - k + 1) x (h - k + 1).
std::vector<double> filter_valid(std::span<const double> img, int w, int h, const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int ow = w - k + 1;
  const int oh = h - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x)
      tmp[static_cast<std::size_t>(y) * ow + x] =
          kernels::dot(taps, img.subspan(static_cast<std::size_t>(y) * w + x, k));
  std::vector<double> out(static_cast<std::size_t>(ow) * oh, 0.0);
  for (int y = 0; y < oh; ++y) {
    std::span<double> dst(out.data() + static_cast<std::size_t>(y) * ow, ow);
    for (int j = 0; j < k; ++j)
      kernels::axpy(taps[j], std::span<const double>(tmp.data() + static_cast<std::size_t>(y + j) * ow, ow), dst);
  }
  return out;
}

}  // namespace

double psnr(const GrayImage& a, const GrayImage& b) {
  require_same_shape(a, b, "psnr");
  const double mse = kernels::squared_distance(a.pixels(), b.pixels()) / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const GrayImage& a, const GrayImage& b, const SsimParams& p) {
  require_same_shape(a, b, "ssim");
  if (p.window < 1 || p.window % 2 == 0) throw Error("ssim: window must be odd and positive");
  if (a.width() < p.window || a.height() < p.window)
    throw Error("ssim: image " + std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                " is smaller than the " + std::to_string(p.window) + "x" + std::to_string(p.window) + " window");

  const auto taps = gaussian_taps(p.window, p.sigma);
  const int w = a.width(), h = a.height();
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  auto pa = a.pixels();
  auto pb = b.pixels();
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = pa[i] * pa[i];
    bb[i] = pb[i] * pb[i];
    ab[i] = pa[i] * pb[i];
  }
  const auto mu1 = filter_valid(pa, w, h, taps);
  const auto mu2 = filter_valid(pb, w, h, taps);
  const auto e11 = filter_valid(aa, w, h, taps);
  const auto e22 = filter_valid(bb, w, h, taps);
  const auto e12 = filter_valid(ab, w, h, taps);

  const double c1 = (p.k1 * 1.0) * (p.k1 * 1.0);
  const double c2 = (p.k2 * 1.0) * (p.k2 * 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double m1 = mu1[i], m2 = mu2[i];
    const double s11 = e11[i] - m1 * m1;
    const double s22 = e22[i] - m2 * m2;
    const double s12 = e12[i] - m1 * m2;
    acc += ((2 * m1 * m2 + c1) * (2 * s12 + c2)) / ((m1 * m1 + m2 * m2 + c1) * (s11 + s22 + c2));
  }
  return acc / static_cast<double>(mu1.size());
}

double image_entropy(const GrayImage& image, int bins) {
  if (bins < 1) throw Error("image_entropy: bins must be positive");
  std::vector<std::size_t> hist(bins, 0);
  for (double v : image.pixels()) {
    auto b = static_cast<int>(v * bins);
    hist[std::min(b, bins - 1)]++;
  }
  const double n = static_cast<double>(image.size());
  double h = 0.0;
  for (std::size_t c : hist) {
    if (c == 0) continue;
    const double q = c / n;
    h -= q * std::log(q);
  }
  return h;
}

std::vector<double> gradient_magnitude(const GrayImage& img) {
  const int w = img.width(), h = img.height();
  auto d = [](double lo, double hi, double span) { return (hi - lo) / span; };
  std::vector<double> g(img.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double gx = 0.0, gy = 0.0;
      if (w > 1) {
        const int x0 = std::max(x - 1, 0), x1 = std::min(x + 1, w - 1);
        gx = d(img.at(x0, y), img.at(x1, y), x1 - x0);
      }
      if (h > 1) {
        const int y0 = std::max(y - 1, 0), y1 = std::min(y + 1, h - 1);
        gy = d(img.at(x, y0), img.at(x, y1), y1 - y0);
      }
      g[static_cast<std::size_t>(y) * w + x] = std::hypot(gx, gy);
    }
  }
  return g;
}

double edge_intensity(const GrayImage& image) {
  const auto g = gradient_magnitude(image);
  double s = 0.0;
  for (double v : g) s += v;
  return s / static_cast<double>(g.size());
}

MetricReport compare(const GrayImage& test, const GrayImage& reference) {
  MetricReport r;
  r.psnr_db = psnr(test, reference);
  r.ssim = ssim(test, reference);
  r.entropy_nats = image_entropy(test);
  r.edge_intensity = edge_intensity(test);
  return r;
}

}  // namespace csileak
