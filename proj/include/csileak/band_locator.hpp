#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csileak/iq_core.hpp"
#include "csileak/raster_recon.hpp"

namespace csileak {

struct BandStats {
  double f_low_hz = 0.0;
  double f_high_hz = 0.0;
  double energy = 0.0;            // sum |s|^2
  double spectral_entropy = 0.0;  // nats, in [0, ln N]
  double autocorr_peak = 0.0;     // in [0, 1]
};

struct ImageStats {
  double image_entropy = 0.0;
  double edge_intensity = 0.0;
};

struct Thresholds {
  double theta_E = -std::numeric_limits<double>::infinity();
  double theta_A = -std::numeric_limits<double>::infinity();
  double theta_H = std::numeric_limits<double>::infinity();
  double theta_img_entropy = 0.5;
  double theta_edge = 0.01;

  static Thresholds vacuous();
};

enum class Verdict { RejectedStage1, RejectedStage2, Accepted };

const char* verdict_name(Verdict v);

struct BandReport {
  BandStats stats;
  std::optional<ImageStats> image_stats;  // present iff verdict != RejectedStage1
  Verdict verdict = Verdict::RejectedStage1;
  std::string diagnostic;
};

/// Envelope autocorrelation is mean-subtracted and normalized by lag 0,
/// searched over lags 1..N/2. An all-zero trace yields all-zero stats.
BandStats band_stats(const IqTrace& trace);

struct ReconParams {
  RasterParams raster;
  SyncOptions sync;
  int envelope_smoothing = 1;
};

/// Single-band reconstruction used by the second scan stage.
GrayImage reconstruct_band(const IqTrace& trace, const ReconParams& params);

using TraceProvider = std::function<IqTrace(double f_low_hz, double f_high_hz)>;

/// Contiguous bands of `band_width_hz` from f_min; a final partial band is
/// dropped. Reports come back in frequency order.
std::vector<BandReport> scan(const TraceProvider& provider, double f_min_hz, double f_max_hz, double band_width_hz,
                             const Thresholds& thresholds, const ReconParams& recon);

/// Stage-1 thresholds at the 90th (energy), 90th (autocorrelation) and 10th
/// (spectral entropy) percentiles of noise-only captures. The image
/// thresholds are copied from `base`.
Thresholds calibrate_thresholds(std::span<const IqTrace> noise, const Thresholds& base = {});

bool passes_stage1(const BandStats& s, const Thresholds& t);
bool passes_stage2(const ImageStats& s, const Thresholds& t);

}  // namespace csileak
