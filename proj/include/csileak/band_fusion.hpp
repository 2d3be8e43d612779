#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "csileak/iq_core.hpp"

namespace csileak {

struct PixelMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  static PixelMask filled(int width, int height, bool value);
  std::size_t count() const;
  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
};

/// Uniform iff the (border-clipped) window variance is below var_threshold.
PixelMask segment_uniform(const GrayImage& image, int window, double var_threshold);

/// Soft threshold around mu, the mean of `band` over `uniform` (median of
/// the whole band when no mask or an empty mask is given).
GrayImage amplitude_threshold(const GrayImage& band, double tau, double sigma_est,
                              const PixelMask* uniform = nullptr);

/// Robust noise level: MAD of horizontal neighbour differences / (0.6745 sqrt 2).
double estimate_noise_sigma(const GrayImage& image);

struct FusionProblem {
  std::vector<GrayImage> bands;
  PixelMask uniform_mask;
  double v_target = 0.5;
  double lambda = 0.1;
  double tau = 0.0;  // amplitude threshold in units of each band's noise sigma

  void validate() const;
};

struct FusionResult {
  GrayImage image;
  std::vector<double> alpha;
  double objective = 0.0;
  int iterations = 0;
};

/// Median of the uniform region of the band with the largest sum of squares.
double default_v_target(std::span<const GrayImage> bands, const PixelMask& uniform);

/// Precomputed objective J(alpha) = sum_mask (I - v)^2 + lambda Phi(I) with
/// I = sum alpha_i B_i and Phi the negative mean gradient magnitude over the
/// union of per-band edge masks (gradient above the band's 75th percentile).
class FusionObjective {
 public:
  explicit FusionObjective(const FusionProblem& problem);

  double value(std::span<const double> alpha) const;
  std::vector<double> gradient(std::span<const double> alpha) const;
  std::size_t bands() const { return bands_.size(); }
  const std::vector<std::vector<double>>& thresholded() const { return bands_; }

 private:
  std::vector<std::vector<double>> bands_;
  std::vector<std::vector<double>> gx_, gy_;
  std::vector<std::size_t> mask_idx_;
  std::vector<std::size_t> edge_idx_;
  double v_target_;
  double lambda_;
};

std::vector<double> project_simplex(std::span<const double> v);

/// Projected gradient on the unit simplex from the uniform start and from
/// every vertex that beats it; the best stationary point wins.
FusionResult fuse(const FusionProblem& problem);

}  // namespace csileak
