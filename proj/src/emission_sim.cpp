#include "csileak/emission_sim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

#include "csileak/error.hpp"
#include "csileak/fft.hpp"

namespace csileak {

namespace {

void validate_band_edges(double lo, double hi, const LineTiming& timing) {
  if (!(lo >= 0.0) || !(lo < hi)) throw Error("emission: band edges must satisfy 0 <= f_low < f_high");
  if (hi > timing.bit_rate_hz / 2.0)
    throw Error("emission: band [" + std::to_string(lo) + ", " + std::to_string(hi) +
                "] Hz lies above the Nyquist limit of the bit waveform (" +
                std::to_string(timing.bit_rate_hz / 2.0) + " Hz)");
}

// Box-filter resampling of a per-bit waveform onto the SDR grid: sample n
// averages the waveform over bits [n r, (n + 1) r).
template <typename T>
std::vector<T> box_resample(const std::vector<T>& per_bit, double r) {
  const std::size_t m = per_bit.size();
  std::vector<T> prefix(m + 1, T{});
  for (std::size_t i = 0; i < m; ++i) prefix[i + 1] = prefix[i] + per_bit[i];
  auto integral = [&](double x) -> T {
    if (x >= static_cast<double>(m)) return prefix[m];
    const auto k = static_cast<std::size_t>(x);
    return prefix[k] + per_bit[k] * (x - static_cast<double>(k));
  };
  const auto n = static_cast<std::size_t>(std::floor(static_cast<double>(m) / r));
  std::vector<T> out(n);
  T prev = integral(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const T next = integral(static_cast<double>(i + 1) * r);
    out[i] = (next - prev) / r;
    prev = next;
  }
  return out;
}

std::vector<double> bitgroup_waveform(const PacketStream& stream, double w_msb, double w_lsb) {
  std::vector<double> amp(stream.bits.size(), 0.0);
  if (w_msb == 0.0 && w_lsb == 0.0) return amp;
  for (std::size_t line = 0; line < stream.line_starts.size(); ++line) {
    const auto px = line_pixels(stream, line);
    const auto start = static_cast<std::size_t>(stream.line_starts[line]);
    for (std::size_t c = 0; c < px.size(); ++c) {
      const double a = w_msb * (px[c] >> 2) / 255.0 + w_lsb * (px[c] & 3u) / 3.0;
      std::fill_n(amp.begin() + static_cast<std::ptrdiff_t>(start + 10 * c), 10, a);
    }
  }
  return amp;
}

// Complex baseband of the +/-1 bit waveform restricted to [lo, hi], sampled
// at the bit rate. The band is shifted so its center lands at DC.
std::vector<cplx> nrz_baseband(const PacketStream& stream, const LineTiming& timing, double lo, double hi) {
  const std::size_t m = stream.bits.size();
  std::vector<cplx> spec(m);
  for (std::size_t i = 0; i < m; ++i) spec[i] = stream.bits[i] ? 1.0 : -1.0;
  fft_inplace(spec, false);

  const double df = timing.bit_rate_hz / static_cast<double>(m);
  const double center = 0.5 * (lo + hi);
  const auto k_center = static_cast<std::int64_t>(std::llround(center / df));
  const auto k_lo = static_cast<std::int64_t>(std::ceil(lo / df));
  const auto k_hi = static_cast<std::int64_t>(std::floor(hi / df));

  std::vector<cplx> base(m, cplx(0.0, 0.0));
  const auto mm = static_cast<std::int64_t>(m);
  for (std::int64_t k = std::max<std::int64_t>(k_lo, 1); k <= k_hi && k < mm; ++k) {
    std::int64_t dst = (k - k_center) % mm;
    if (dst < 0) dst += mm;
    // One-sided spectrum, doubled so a real tone keeps its amplitude.
    base[static_cast<std::size_t>(dst)] = 2.0 * spec[static_cast<std::size_t>(k)];
  }
  fft_inplace(base, true);
  const double scale = 1.0 / static_cast<double>(m);
  for (auto& v : base) v *= scale;
  return base;
}

std::uint64_t noise_seed(std::uint64_t seed, double lo, double hi) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(lo)),
                    static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(lo) >> 32),
                    static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(hi)),
                    static_cast<std::uint32_t>(std::bit_cast<std::uint64_t>(hi) >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

void EmissionConfig::validate(const LineTiming& timing) const {
  timing.validate();
  if (!(sdr_sample_rate_hz > 0.0)) throw Error("emission: SDR sample rate must be positive");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw Error("emission: noise sigma must be >= 0");
  if (!std::isfinite(clock_offset) || !std::isfinite(drift_ppm)) throw Error("emission: non-finite offset or drift");
  if (drift() <= -1.0) throw Error("emission: drift must exceed -1e6 ppm");
  for (const auto& b : bands) validate_band_edges(b.f_low_hz, b.f_high_hz, timing);
}

double bits_per_sample(const LineTiming& timing, const EmissionConfig& cfg) {
  return timing.bit_rate_hz * (1.0 + cfg.drift()) / cfg.sdr_sample_rate_hz;
}

double bit_to_sample(double bit_index, const LineTiming& timing, const EmissionConfig& cfg) {
  return bit_index / bits_per_sample(timing, cfg);
}

IqTrace simulate_subband(const PacketStream& stream, const LineTiming& timing, const EmissionConfig& cfg,
                         double f_low_hz, double f_high_hz) {
  cfg.validate(timing);
  validate_band_edges(f_low_hz, f_high_hz, timing);
  if (stream.bits.empty()) throw Error("emission: empty packet stream");
  const double r = bits_per_sample(timing, cfg);
  if (r > static_cast<double>(stream.bits.size())) throw Error("emission: stream shorter than one SDR sample");

  std::vector<cplx> clean;
  if (cfg.mode == EmissionMode::BitgroupAnalytic) {
    double w_msb = 0.0, w_lsb = 0.0;
    for (const auto& b : cfg.bands) {
      if (f_low_hz < b.f_high_hz && b.f_low_hz < f_high_hz) {
        w_msb = b.w_msb;
        w_lsb = b.w_lsb;
        break;
      }
    }
    const auto real = box_resample(bitgroup_waveform(stream, w_msb, w_lsb), r);
    clean.assign(real.begin(), real.end());
  } else {
    clean = box_resample(nrz_baseband(stream, timing, f_low_hz, f_high_hz), r);
  }

  std::mt19937_64 rng(noise_seed(cfg.seed, f_low_hz, f_high_hz));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Sample> out(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    double re = clean[i].real() + cfg.clock_offset;
    double im = clean[i].imag();
    if (cfg.noise_sigma > 0.0) {
      re += cfg.noise_sigma * gauss(rng);
      im += cfg.noise_sigma * gauss(rng);
    }
    out[i] = Sample(static_cast<float>(re), static_cast<float>(im));
  }
  return IqTrace(std::move(out), cfg.sdr_sample_rate_hz, 0.5 * (f_low_hz + f_high_hz));
}

IqTrace simulate_band(const PacketStream& stream, const LineTiming& timing, const EmissionConfig& cfg,
                      std::size_t band_index) {
  if (band_index >= cfg.bands.size())
    throw Error("emission: band index " + std::to_string(band_index) + " out of range");
  const auto& b = cfg.bands[band_index];
  return simulate_subband(stream, timing, cfg, b.f_low_hz, b.f_high_hz);
}

std::vector<IqTrace> simulate_all(const PacketStream& stream, const LineTiming& timing,
                                  const EmissionConfig& cfg) {
  std::vector<IqTrace> out;
  out.reserve(cfg.bands.size());
  for (std::size_t i = 0; i < cfg.bands.size(); ++i) out.push_back(simulate_band(stream, timing, cfg, i));
  return out;
}

std::vector<double> expected_frame_starts(const PacketStream& stream, const LineTiming& timing,
                                          const EmissionConfig& cfg) {
  std::vector<double> out;
  const auto h = static_cast<std::size_t>(stream.height);
  for (std::size_t f = 0; f < stream.frame_count(); ++f) {
    const double bit = cfg.mode == EmissionMode::BitgroupAnalytic
                           ? static_cast<double>(stream.line_starts[f * h])
                           : static_cast<double>(stream.frame_starts[f]);
    out.push_back(bit_to_sample(bit, timing, cfg));
  }
  return out;
}

}  // namespace csileak
