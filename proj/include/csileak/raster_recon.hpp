#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "csileak/iq_core.hpp"

namespace csileak {

/// |samples[n]|, optionally smoothed by a centered moving average of odd
/// `smoothing` width (zero padding at the edges; 1 disables smoothing).
std::vector<float> envelope(const IqTrace& trace, int smoothing = 1);

std::vector<float> moving_average(std::span<const float> x, int width);

enum class BlankThresholdMethod {
  PercentileMidpoint,  // (p5 + p50) / 2 of the envelope
  Otsu,
};

/// Knobs for detect_sync. Every `nominal_*` / explicit value overrides the
/// corresponding blind estimate; periods are in SDR samples.
struct SyncOptions {
  BlankThresholdMethod threshold_method = BlankThresholdMethod::PercentileMidpoint;
  std::optional<double> theta_blank;
  std::optional<double> nominal_line_period;
  // Known (drift-free) frame period. Required to estimate drift: the fitted
  // frame spacing is compared against it.
  std::optional<double> nominal_frame_period;
  std::optional<double> line_active_samples;
  // Shortest blanking run that counts as a frame boundary. Defaults to
  // min_gap_fraction times the longest blanking run seen.
  std::optional<std::int64_t> min_gap_samples;
  double min_gap_fraction = 0.5;
};

/// Line/frame timing recovered from an envelope.
///
/// `frame_starts[k]` is the first non-blank sample after the k-th frame
/// boundary. Predicted frame origins come from a least-squares fit of those
/// starts, re-anchored every `segment_frames` frames (the realignment
/// period 1/|drift|; 0 means a single segment).
struct SyncModel {
  double line_period_samples = 0.0;   // drift-free when nominal timing was given
  double frame_period_samples = 0.0;  // drift-free when nominal timing was given
  double theta_blank = 0.0;
  double drift_estimate = 0.0;        // (f_camera - f_sdr) / f_sdr
  std::vector<std::int64_t> frame_starts;
  double line_active_samples = 0.0;   // emitting part of each line period
  std::vector<double> segment_origins;
  std::int64_t segment_frames = 0;

  double effective_frame_period() const { return frame_period_samples / (1.0 + drift_estimate); }
  double effective_line_period() const { return line_period_samples / (1.0 + drift_estimate); }
  double effective_line_active() const { return line_active_samples / (1.0 + drift_estimate); }
  std::size_t frame_count() const { return frame_starts.size(); }
  // Drift-corrected origin of frame k.
  double frame_origin(std::size_t k) const;
};

// Throws "no frame boundaries" when the envelope has no blanking run and an
// error when fewer than two frames are found.
SyncModel detect_sync(std::span<const float> env, double sample_rate_hz, const SyncOptions& options = {});

/// Sync model from known timing (tests, or a fully characterized target).
/// Periods are drift-free; the drift is read off the spacing of the origins.
SyncModel sync_from_timing(std::span<const double> frame_origins, double line_period, double frame_period,
                           double line_active, double theta_blank = 0.0);

/// Blanking indicator B[n] = env[n] < theta.
std::vector<std::uint8_t> blanking_indicator(std::span<const float> env, double theta);

/// Rounds of the drift-free realignment rule: 1/|drift| frames (0 if drift is 0).
std::int64_t realignment_period(double drift);

enum class Interpolation { Nearest, Linear };

struct RasterParams {
  int out_width = 64;
  int out_height = 64;
  int frames_to_average = 1;
  Interpolation interpolation = Interpolation::Linear;
  bool drift_correction = true;

  void validate() const;
};

/// Un-normalized pixel grid of frame k (row-major, out_width x out_height).
std::vector<double> rasterize_raw(std::span<const float> env, const SyncModel& sync, const RasterParams& params,
                                  std::size_t k);

/// rasterize_raw followed by min-max normalization.
GrayImage rasterize(std::span<const float> env, const SyncModel& sync, const RasterParams& params, std::size_t k);

/// Mean of the raw grids of the listed frames, min-max normalized.
GrayImage average_frame_set(std::span<const float> env, const SyncModel& sync, const RasterParams& params,
                            std::span<const std::size_t> frames);

/// Mean of the first `frames_to_average` frames (capped at the detected count).
GrayImage average_frames(std::span<const float> env, const SyncModel& sync, const RasterParams& params);

}  // namespace csileak
