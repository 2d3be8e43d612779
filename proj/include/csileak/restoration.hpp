#pragma once

#include <vector>

#include "csileak/iq_core.hpp"

namespace csileak {

/// Square, odd-sized convolution kernel (row-major) whose entries sum to 1.
struct BlurKernel {
  int size = 3;
  std::vector<double> taps;

  static BlurKernel blur3();  // [1 2 1]^T [1 2 1] / 16
  void validate() const;
};

enum class ForwardKind { Identity, Blur };

struct ForwardModel {
  ForwardKind kind = ForwardKind::Identity;
  BlurKernel kernel;

  static ForwardModel identity() { return {}; }
  static ForwardModel blur(BlurKernel k) { return {ForwardKind::Blur, std::move(k)}; }

  // Blur gathers with symmetric (edge-repeating) reflection; the adjoint
  // scatters the same weights back.
  std::vector<double> apply(std::span<const double> x, int w, int h) const;
  std::vector<double> adjoint(std::span<const double> r, int w, int h) const;
  // Upper bound on the squared operator norm: ||phi||_1 ||phi||_inf.
  double norm_bound(int w, int h) const;
};

struct RestorationProblem {
  GrayImage y;
  double lambda = 0.1;
  double noise_sigma_y = 0.0;
  ForwardModel forward;
  int iterations = 100;

  void validate() const;
};

enum class PriorKind { TotalVariation };

struct PriorSpec {
  PriorKind kind = PriorKind::TotalVariation;
  int inner_iterations = 100;  // dual iterations per TV proximal step
};

struct RestorationResult {
  GrayImage image;
  std::vector<double> objective_trace;  // objective before the first and after every accepted step
  int iterations = 0;
};

/// Anisotropic TV: sum of absolute forward differences (none past the last row/column).
double total_variation(std::span<const double> x, int w, int h);

/// ||phi(x) - y||^2 + lambda TV(x)
double objective(std::span<const double> x, const RestorationProblem& problem, const PriorSpec& prior = {});
double objective(const GrayImage& x, const RestorationProblem& problem, const PriorSpec& prior = {});

/// Gradient of ||phi(x) - y||^2.
std::vector<double> data_gradient(std::span<const double> x, const RestorationProblem& problem);

/// Proximal gradient with step 1/L, L = 2 ||phi||_1 ||phi||_inf, iterates kept in
/// [0, 1]. A step that would raise the objective is retried with a halved step
/// and a longer inner solve; if that never helps the solver stops, or throws
/// with the objective trace when the rise is more than rounding noise.
RestorationResult restore(const RestorationProblem& problem, const PriorSpec& prior = {});

}  // namespace csileak
