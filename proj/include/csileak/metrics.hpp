#pragma once

#include <limits>

#include "csileak/iq_core.hpp"

namespace csileak {

/// psnr() of two identical images. Reported as "inf" in text output.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double entropy_nats = 0.0;   // of the test image
  double edge_intensity = 0.0; // of the test image
};

// 10 log10(1 / MSE) for intensities in [0, 1]; kPsnrIdentical when MSE == 0.
double psnr(const GrayImage& a, const GrayImage& b);

// Mean of the Gaussian-windowed SSIM map over all window positions that fit
// inside the image (dynamic range L = 1).
double ssim(const GrayImage& a, const GrayImage& b, const SsimParams& params = {});

// Shannon entropy (nats) of a histogram with `bins` uniform bins over [0, 1].
double image_entropy(const GrayImage& image, int bins = 256);

// Mean gradient magnitude; central differences inside, one-sided at borders.
double edge_intensity(const GrayImage& image);

// Per-pixel gradient magnitude, same stencil as edge_intensity.
std::vector<double> gradient_magnitude(const GrayImage& image);

MetricReport compare(const GrayImage& test, const GrayImage& reference);

}  // namespace csileak
