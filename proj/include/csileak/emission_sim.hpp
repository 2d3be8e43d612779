#pragma once

#include <cstdint>
#include <vector>

#include "csileak/csi2_codec.hpp"
#include "csileak/iq_core.hpp"

namespace csileak {

enum class EmissionMode {
  // Bits drive a +/-1 zero-order-hold waveform that is band-pass filtered,
  // downconverted and resampled.
  NrzPhysical,
  // Each pixel emits w_msb * (p >> 2) / 255 + w_lsb * (p & 3) / 3 for its ten
  // bit periods; headers, trailers and blanking emit nothing.
  BitgroupAnalytic,
};

struct EmissionBand {
  double f_low_hz = 0.0;
  double f_high_hz = 0.0;
  double w_msb = 1.0;  // analytic mode only
  double w_lsb = 0.0;  // analytic mode only
};

struct EmissionConfig {
  std::vector<EmissionBand> bands;
  double sdr_sample_rate_hz = 100e6;
  double noise_sigma = 0.0;   // per-component sigma of complex white Gaussian noise
  double clock_offset = 0.0;  // real offset added to every sample
  double drift_ppm = 0.0;     // (f_camera - f_sdr) / f_sdr * 1e6
  EmissionMode mode = EmissionMode::BitgroupAnalytic;
  std::uint64_t seed = 0;

  double drift() const { return drift_ppm * 1e-6; }
  void validate(const LineTiming& timing) const;
};

/// Link bits elapsed per SDR sample, including clock drift.
double bits_per_sample(const LineTiming& timing, const EmissionConfig& cfg);

/// Position (in SDR samples, fractional) at which a given link bit begins.
double bit_to_sample(double bit_index, const LineTiming& timing, const EmissionConfig& cfg);

IqTrace simulate_band(const PacketStream& stream, const LineTiming& timing, const EmissionConfig& cfg,
                      std::size_t band_index);

std::vector<IqTrace> simulate_all(const PacketStream& stream, const LineTiming& timing,
                                  const EmissionConfig& cfg);

/// Capture of an arbitrary sub-band. In analytic mode a sub-band that does not
/// overlap a configured emission band contains noise (and offset) only. Noise
/// is seeded from the config seed and the band edges, so the same sub-band is
/// always the same trace and `simulate_band(i)` equals the sub-band of band i.
IqTrace simulate_subband(const PacketStream& stream, const LineTiming& timing, const EmissionConfig& cfg,
                         double f_low_hz, double f_high_hz);

/// Ground-truth SDR sample position of each frame's first emitting bit: the
/// first payload bit in analytic mode, the first header bit in NRZ mode.
std::vector<double> expected_frame_starts(const PacketStream& stream, const LineTiming& timing,
                                          const EmissionConfig& cfg);

}  // namespace csileak
