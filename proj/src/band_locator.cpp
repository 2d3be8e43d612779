#include "csileak/band_locator.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "csileak/error.hpp"
#include "csileak/fft.hpp"
#include "csileak/kernels.hpp"
#include "csileak/metrics.hpp"

namespace csileak {

namespace {

// Linear-interpolated percentile, q in [0, 1].
double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double f = pos - static_cast<double>(i);
  if (i + 1 >= v.size()) return v.back();
  return v[i] + f * (v[i + 1] - v[i]);
}

}  // namespace

Thresholds Thresholds::vacuous() {
  const double inf = std::numeric_limits<double>::infinity();
  return Thresholds{-inf, -inf, inf, -inf, -inf};
}

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::RejectedStage1: return "REJECTED_STAGE1";
    case Verdict::RejectedStage2: return "REJECTED_STAGE2";
    case Verdict::Accepted: return "ACCEPTED";
  }
  return "?";
}

BandStats band_stats(const IqTrace& trace) {
  BandStats s;
  const auto samples = trace.samples();
  const std::size_t n = samples.size();
  s.energy = kernels::energy(samples);
  if (s.energy == 0.0) return s;

  std::vector<cplx> spec(samples.begin(), samples.end());
  fft_inplace(spec, false);
  double total = 0.0;
  for (const auto& c : spec) total += std::norm(c);
  double h = 0.0;
  for (const auto& c : spec) {
    const double q = std::norm(c) / total;
    if (q > 0.0) h -= q * std::log(q);
  }
  s.spectral_entropy = std::clamp(h, 0.0, std::log(static_cast<double>(n)));

  if (n >= 2) {
    std::vector<float> env(n);
    kernels::magnitude(samples, env);
    double mean = 0.0;
    for (float v : env) mean += v;
    mean /= static_cast<double>(n);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = env[i] - mean;
    const auto r = autocorrelation(x, n / 2);
    if (r[0] > 0.0) {
      double peak = 0.0;
      for (std::size_t k = 1; k < r.size(); ++k) peak = std::max(peak, std::abs(r[k]) / r[0]);
      s.autocorr_peak = std::min(peak, 1.0);
    }
  }
  return s;
}

bool passes_stage1(const BandStats& s, const Thresholds& t) {
  return s.energy > t.theta_E && s.autocorr_peak > t.theta_A && s.spectral_entropy < t.theta_H;
}

bool passes_stage2(const ImageStats& s, const Thresholds& t) {
  return s.image_entropy > t.theta_img_entropy && s.edge_intensity > t.theta_edge;
}

GrayImage reconstruct_band(const IqTrace& trace, const ReconParams& params) {
  const auto env = envelope(trace, params.envelope_smoothing);
  const auto sync = detect_sync(env, trace.sample_rate_hz(), params.sync);
  return average_frames(env, sync, params.raster);
}

std::vector<BandReport> scan(const TraceProvider& provider, double f_min, double f_max, double band_width,
                             const Thresholds& t, const ReconParams& recon) {
  if (!(band_width > 0.0)) throw Error("scan: band width must be positive");
  if (!(f_max > f_min)) throw Error("scan: empty frequency range");
  const auto count = static_cast<std::size_t>(std::floor((f_max - f_min) / band_width + 1e-9));
  std::vector<BandReport> out;
  for (std::size_t i = 0; i < count; ++i) {
    BandReport rep;
    rep.stats.f_low_hz = f_min + static_cast<double>(i) * band_width;
    rep.stats.f_high_hz = rep.stats.f_low_hz + band_width;
    std::optional<IqTrace> trace;
    try {
      trace.emplace(provider(rep.stats.f_low_hz, rep.stats.f_high_hz));
    } catch (const std::exception& e) {
      rep.diagnostic = std::string("capture failed: ") + e.what();
      out.push_back(std::move(rep));
      continue;
    }
    const double lo = rep.stats.f_low_hz, hi = rep.stats.f_high_hz;
    rep.stats = band_stats(*trace);
    rep.stats.f_low_hz = lo;
    rep.stats.f_high_hz = hi;
    if (!passes_stage1(rep.stats, t)) {
      rep.diagnostic = "signal statistics below threshold";
      out.push_back(std::move(rep));
      continue;
    }
    ImageStats is;
    try {
      const auto img = reconstruct_band(*trace, recon);
      is.image_entropy = image_entropy(img);
      is.edge_intensity = edge_intensity(img);
    } catch (const std::exception& e) {
      rep.image_stats = is;
      rep.verdict = Verdict::RejectedStage2;
      rep.diagnostic = std::string("reconstruction failed: ") + e.what();
      out.push_back(std::move(rep));
      continue;
    }
    rep.image_stats = is;
    if (passes_stage2(is, t)) {
      rep.verdict = Verdict::Accepted;
    } else {
      rep.verdict = Verdict::RejectedStage2;
      rep.diagnostic = "image statistics below threshold";
    }
    out.push_back(std::move(rep));
  }
  return out;
}

Thresholds calibrate_thresholds(std::span<const IqTrace> noise, const Thresholds& base) {
  if (noise.empty()) throw Error("calibrate_thresholds: no calibration captures");
  std::vector<double> e, a, h;
  for (const auto& tr : noise) {
    const auto s = band_stats(tr);
    e.push_back(s.energy);
    a.push_back(s.autocorr_peak);
    h.push_back(s.spectral_entropy);
  }
  Thresholds t = base;
  t.theta_E = percentile(e, 0.90);
  t.theta_A = percentile(a, 0.90);
  t.theta_H = percentile(h, 0.10);
  return t;
}

}  // namespace csileak
