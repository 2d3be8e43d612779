#include "csileak/raster_recon.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "csileak/error.hpp"
#include "csileak/fft.hpp"
#include "csileak/kernels.hpp"

namespace csileak {

namespace {

double percentile(std::vector<float> v, double q) {
  if (v.empty()) return 0.0;
  const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
  return v[idx];
}

double otsu_threshold(std::span<const float> env) {
  const auto [lo_it, hi_it] = std::minmax_element(env.begin(), env.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi <= lo) return lo;
  constexpr int kBins = 256;
  std::vector<double> hist(kBins, 0.0);
  for (float v : env) {
    auto b = static_cast<int>((v - lo) / (hi - lo) * kBins);
    hist[std::clamp(b, 0, kBins - 1)] += 1.0;
  }
  const double total = static_cast<double>(env.size());
  double sum_all = 0.0;
  for (int i = 0; i < kBins; ++i) sum_all += i * hist[i];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_i = 0;
  for (int i = 0; i < kBins - 1; ++i) {
    w0 += hist[i];
    sum0 += i * hist[i];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_i = i;
    }
  }
  return lo + (best_i + 1) * (hi - lo) / kBins;
}

struct Run {
  std::int64_t begin;
  std::int64_t length;
};

std::vector<Run> blank_runs(std::span<const float> env, double theta) {
  std::vector<Run> runs;
  const auto n = static_cast<std::int64_t>(env.size());
  std::int64_t i = 0;
  while (i < n) {
    if (env[i] < theta) {
      const std::int64_t b = i;
      while (i < n && env[i] < theta) ++i;
      runs.push_back({b, i - b});
    } else {
      ++i;
    }
  }
  return runs;
}

double median(std::vector<double> v) {
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  double hi = v[m];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m)));
}

// Vertex of the parabola through (k-1, k, k+1).
double parabolic_peak(const std::vector<double>& r, std::size_t k) {
  if (k == 0 || k + 1 >= r.size()) return static_cast<double>(k);
  const double a = r[k - 1], b = r[k], c = r[k + 1];
  const double den = a - 2.0 * b + c;
  if (den >= 0.0) return static_cast<double>(k);
  return static_cast<double>(k) + 0.5 * (a - c) / den;
}

std::size_t argmax_in(const std::vector<double>& r, std::size_t lo, std::size_t hi) {
  hi = std::min(hi, r.size() - 1);
  std::size_t best = lo;
  for (std::size_t k = lo; k <= hi; ++k)
    if (r[k] > r[best]) best = k;
  return best;
}

double estimate_line_period(std::span<const float> env, double frame_period) {
  const std::size_t n = env.size();
  double mean = 0.0;
  for (float v : env) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = env[i] - mean;

  const auto max_lag = std::min<std::size_t>(n - 1, static_cast<std::size_t>(frame_period / 2.0));
  if (max_lag < 4) throw Error("detect_sync: frame period too short to estimate the line period");
  const auto r = autocorrelation(x, max_lag);

  std::size_t k0 = 1;
  while (k0 <= max_lag && r[k0] > 0.0) ++k0;
  if (k0 >= max_lag) throw Error("detect_sync: no line periodicity in the envelope");

  std::size_t t0 = argmax_in(r, k0, max_lag);
  // A biased autocorrelation can peak on a multiple of the true period.
  for (int d = 4; d >= 2; --d) {
    const double cand = static_cast<double>(t0) / d;
    if (cand < static_cast<double>(k0)) continue;
    const auto c = static_cast<std::size_t>(std::lround(cand));
    const std::size_t lo = c > 2 ? c - 2 : 1;
    const std::size_t k = argmax_in(r, std::max(lo, k0), c + 2);
    if (r[k] >= 0.85 * r[t0]) {
      t0 = k;
      break;
    }
  }
  double period = parabolic_peak(r, t0);

  // Refine on the furthest harmonic still inside the search range.
  const auto m = static_cast<std::size_t>(std::floor(0.9 * static_cast<double>(max_lag) / period));
  if (m >= 2) {
    const double centre = period * static_cast<double>(m);
    const auto half = static_cast<std::size_t>(m / 2 + 2);
    const auto c = static_cast<std::size_t>(std::lround(centre));
    const std::size_t k = argmax_in(r, c > half ? c - half : 1, c + half);
    period = parabolic_peak(r, k) / static_cast<double>(m);
  }
  return period;
}

void require_span(std::int64_t i, std::size_t n) {
  if (i < 0 || static_cast<std::size_t>(i) >= n)
    throw Error("rasterize: frame span exceeds envelope length (sample " + std::to_string(i) + " of " +
                std::to_string(n) + ")");
}

}  // namespace

std::vector<float> envelope(const IqTrace& trace, int smoothing) {
  std::vector<float> env(trace.size());
  kernels::magnitude(trace.samples(), env);
  if (smoothing == 1) return env;
  return moving_average(env, smoothing);
}

std::vector<float> moving_average(std::span<const float> x, int width) {
  if (width < 1 || width % 2 == 0) throw Error("moving_average: width must be odd and positive");
  const auto n = static_cast<std::int64_t>(x.size());
  std::vector<double> prefix(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) prefix[i + 1] = prefix[i] + x[i];
  const std::int64_t h = width / 2;
  std::vector<float> out(x.size());
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t lo = std::max<std::int64_t>(i - h, 0);
    const std::int64_t hi = std::min<std::int64_t>(i + h + 1, n);
    out[static_cast<std::size_t>(i)] = static_cast<float>((prefix[hi] - prefix[lo]) / width);
  }
  return out;
}

std::vector<std::uint8_t> blanking_indicator(std::span<const float> env, double theta) {
  std::vector<std::uint8_t> b(env.size());
  for (std::size_t i = 0; i < env.size(); ++i) b[i] = env[i] < theta ? 1 : 0;
  return b;
}

std::int64_t realignment_period(double drift) {
  if (drift == 0.0) return 0;
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(1.0 / std::abs(drift))));
}

double SyncModel::frame_origin(std::size_t k) const {
  if (segment_origins.empty()) throw Error("sync model has no frame origins");
  std::size_t seg = 0;
  if (segment_frames > 0)
    seg = std::min(k / static_cast<std::size_t>(segment_frames), segment_origins.size() - 1);
  const double local = static_cast<double>(k) - static_cast<double>(seg) * static_cast<double>(segment_frames);
  return segment_origins[seg] + local * effective_frame_period();
}

SyncModel detect_sync(std::span<const float> env, double sample_rate_hz, const SyncOptions& opt) {
  if (!(sample_rate_hz > 0.0)) throw Error("detect_sync: sample rate must be positive");
  if (env.empty()) throw Error("detect_sync: no frame boundaries (empty envelope)");

  SyncModel sm;
  if (opt.theta_blank)
    sm.theta_blank = *opt.theta_blank;
  else if (opt.threshold_method == BlankThresholdMethod::Otsu)
    sm.theta_blank = otsu_threshold(env);
  else {
    std::vector<float> copy(env.begin(), env.end());
    sm.theta_blank = 0.5 * (percentile(copy, 0.05) + percentile(copy, 0.50));
  }

  const auto runs = blank_runs(env, sm.theta_blank);
  if (runs.empty()) throw Error("detect_sync: no frame boundaries");
  std::int64_t longest = 0;
  for (const auto& r : runs) longest = std::max(longest, r.length);
  const std::int64_t min_gap = opt.min_gap_samples
                                   ? *opt.min_gap_samples
                                   : std::max<std::int64_t>(1, std::llround(opt.min_gap_fraction * longest));

  std::vector<std::int64_t> raw;
  std::vector<double> gap_lengths;
  const auto n = static_cast<std::int64_t>(env.size());
  for (const auto& r : runs) {
    if (r.length < min_gap || r.begin + r.length >= n) continue;
    raw.push_back(r.begin + r.length);
    gap_lengths.push_back(static_cast<double>(r.length));
  }
  if (raw.empty()) throw Error("detect_sync: no frame boundaries");
  if (raw.size() < 2) throw Error("detect_sync: fewer than 2 frames detected");

  std::vector<double> diffs;
  for (std::size_t i = 1; i < raw.size(); ++i) diffs.push_back(static_cast<double>(raw[i] - raw[i - 1]));
  const double p_med = median(diffs);

  // Drop boundaries closer than half a frame, then number frames allowing
  // for missed boundaries.
  std::vector<std::int64_t> kept{raw.front()};
  for (std::size_t i = 1; i < raw.size(); ++i)
    if (static_cast<double>(raw[i] - kept.back()) >= 0.5 * p_med) kept.push_back(raw[i]);
  if (kept.size() < 2) throw Error("detect_sync: fewer than 2 frames detected");
  std::vector<double> idx{0.0};
  for (std::size_t i = 1; i < kept.size(); ++i) {
    const double step = std::max(1.0, std::round(static_cast<double>(kept[i] - kept[i - 1]) / p_med));
    idx.push_back(idx.back() + step);
  }

  // Least squares t = a + b k.
  const double kn = static_cast<double>(kept.size());
  const double mk = std::accumulate(idx.begin(), idx.end(), 0.0) / kn;
  double mt = 0.0;
  for (auto t : kept) mt += static_cast<double>(t);
  mt /= kn;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    sxy += (idx[i] - mk) * (static_cast<double>(kept[i]) - mt);
    sxx += (idx[i] - mk) * (idx[i] - mk);
  }
  const double slope = sxy / sxx;
  if (!(slope > 0.0)) throw Error("detect_sync: degenerate frame spacing");

  if (opt.nominal_frame_period) {
    sm.frame_period_samples = *opt.nominal_frame_period;
    sm.drift_estimate = sm.frame_period_samples / slope - 1.0;
  } else {
    sm.frame_period_samples = slope;
    sm.drift_estimate = 0.0;
  }

  const auto total = static_cast<std::size_t>(idx.back()) + 1;
  sm.segment_frames = realignment_period(sm.drift_estimate);
  const std::size_t seg_len = sm.segment_frames > 0 ? static_cast<std::size_t>(sm.segment_frames) : total;
  const std::size_t n_seg = (total + seg_len - 1) / seg_len;
  sm.segment_origins.assign(n_seg, 0.0);
  std::vector<double> seg_count(n_seg, 0.0);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto k = static_cast<std::size_t>(idx[i]);
    const std::size_t s = k / seg_len;
    sm.segment_origins[s] += static_cast<double>(kept[i]) - static_cast<double>(k - s * seg_len) * slope;
    seg_count[s] += 1.0;
  }
  for (std::size_t s = 0; s < n_seg; ++s) {
    if (seg_count[s] > 0.0)
      sm.segment_origins[s] /= seg_count[s];
    else  // no detection in this segment: carry the previous one forward
      sm.segment_origins[s] = sm.segment_origins[s - 1] + static_cast<double>(seg_len) * slope;
  }

  sm.frame_starts.assign(total, 0);
  {
    std::size_t j = 0;
    for (std::size_t k = 0; k < total; ++k) {
      if (j < kept.size() && static_cast<std::size_t>(idx[j]) == k)
        sm.frame_starts[k] = kept[j++];
      else
        sm.frame_starts[k] = std::llround(sm.frame_origin(k));
    }
  }

  if (opt.nominal_line_period) {
    sm.line_period_samples = *opt.nominal_line_period;
  } else {
    sm.line_period_samples = estimate_line_period(env, slope) * (1.0 + sm.drift_estimate);
  }
  if (sm.line_period_samples > sm.frame_period_samples)
    throw Error("detect_sync: line period exceeds frame period");

  if (opt.line_active_samples) {
    sm.line_active_samples = *opt.line_active_samples;
  } else {
    // Fold the envelope over the lines of every frame and keep the part of
    // the line period that sits above the blanking threshold.
    const double lp = sm.effective_line_period();
    const double frame_blank = median(gap_lengths);
    const auto lines = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::floor((slope - frame_blank) / lp)) + 1);
    const auto width = static_cast<std::size_t>(std::ceil(lp));
    std::vector<double> prof(width, 0.0), cnt(width, 0.0);
    for (std::size_t k = 0; k < total; ++k) {
      const double o = sm.frame_origin(k);
      for (std::int64_t j = 0; j < lines; ++j) {
        for (std::size_t u = 0; u < width; ++u) {
          const auto i = std::llround(o + static_cast<double>(j) * lp + static_cast<double>(u));
          if (i < 0 || i >= n) continue;
          prof[u] += env[static_cast<std::size_t>(i)];
          cnt[u] += 1.0;
        }
      }
    }
    std::size_t last = 0;
    bool any = false;
    for (std::size_t u = 0; u < width; ++u) {
      if (cnt[u] > 0.0 && prof[u] / cnt[u] >= sm.theta_blank) {
        last = u;
        any = true;
      }
    }
    if (!any) throw Error("detect_sync: could not locate the active part of a line");
    sm.line_active_samples = static_cast<double>(last + 1) * (1.0 + sm.drift_estimate);
  }
  return sm;
}

SyncModel sync_from_timing(std::span<const double> frame_origins, double line_period, double frame_period,
                           double line_active, double theta_blank) {
  if (frame_origins.empty()) throw Error("sync_from_timing: no frames");
  if (!(line_period > 0.0) || !(frame_period >= line_period) || !(line_active > 0.0))
    throw Error("sync_from_timing: invalid periods");
  SyncModel sm;
  sm.line_period_samples = line_period;
  sm.frame_period_samples = frame_period;
  sm.line_active_samples = line_active;
  sm.theta_blank = theta_blank;
  sm.segment_origins = {frame_origins.front()};
  for (double t : frame_origins) sm.frame_starts.push_back(static_cast<std::int64_t>(std::ceil(t)));
  if (frame_origins.size() >= 2)
    sm.frame_period_samples = (frame_origins.back() - frame_origins.front()) /
                              static_cast<double>(frame_origins.size() - 1);
  sm.drift_estimate = frame_period / sm.frame_period_samples - 1.0;
  sm.frame_period_samples = frame_period;
  sm.segment_frames = 0;
  return sm;
}

void RasterParams::validate() const {
  if (out_width < 1 || out_height < 1) throw Error("raster: output dimensions must be positive");
  if (frames_to_average < 1) throw Error("raster: frames_to_average must be positive");
}

std::vector<double> rasterize_raw(std::span<const float> env, const SyncModel& sync, const RasterParams& p,
                                  std::size_t k) {
  p.validate();
  if (k >= sync.frame_count())
    throw Error("rasterize: frame index " + std::to_string(k) + " out of range (" +
                std::to_string(sync.frame_count()) + " frames)");
  double origin, lp, active;
  if (p.drift_correction) {
    origin = sync.frame_origin(k);
    lp = sync.effective_line_period();
    active = sync.effective_line_active();
  } else {
    origin = sync.segment_origins.at(0) + static_cast<double>(k) * sync.frame_period_samples;
    lp = sync.line_period_samples;
    active = sync.line_active_samples;
  }
  const double px = active / p.out_width;
  const std::size_t n = env.size();
  std::vector<double> out(static_cast<std::size_t>(p.out_width) * p.out_height);
  for (int j = 0; j < p.out_height; ++j) {
    const double s = origin + j * lp;
    for (int c = 0; c < p.out_width; ++c) {
      const double pos = s + (c + 0.5) * px - 0.5;
      double v;
      if (p.interpolation == Interpolation::Nearest) {
        const auto i = static_cast<std::int64_t>(std::llround(pos));
        require_span(i, n);
        v = env[static_cast<std::size_t>(i)];
      } else {
        const double fl = std::floor(pos);
        const auto i0 = static_cast<std::int64_t>(fl);
        const double f = pos - fl;
        require_span(i0, n);
        v = env[static_cast<std::size_t>(i0)];
        if (f > 0.0) {
          require_span(i0 + 1, n);
          v = (1.0 - f) * v + f * env[static_cast<std::size_t>(i0 + 1)];
        }
      }
      out[static_cast<std::size_t>(j) * p.out_width + c] = v;
    }
  }
  return out;
}

GrayImage rasterize(std::span<const float> env, const SyncModel& sync, const RasterParams& p, std::size_t k) {
  return normalize_minmax(p.out_width, p.out_height, rasterize_raw(env, sync, p, k));
}

GrayImage average_frame_set(std::span<const float> env, const SyncModel& sync, const RasterParams& p,
                            std::span<const std::size_t> frames) {
  if (frames.empty()) throw Error("average_frames: no frames to average");
  std::vector<double> acc(static_cast<std::size_t>(p.out_width) * p.out_height, 0.0);
  for (std::size_t k : frames) {
    const auto raw = rasterize_raw(env, sync, p, k);
    kernels::axpy(1.0, raw, acc);
  }
  const double inv = 1.0 / static_cast<double>(frames.size());
  for (double& v : acc) v *= inv;
  return normalize_minmax(p.out_width, p.out_height, acc);
}

GrayImage average_frames(std::span<const float> env, const SyncModel& sync, const RasterParams& p) {
  p.validate();
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(p.frames_to_average), sync.frame_count());
  if (count == 0) throw Error("average_frames: no frames available");
  std::vector<std::size_t> frames(count);
  std::iota(frames.begin(), frames.end(), std::size_t{0});
  return average_frame_set(env, sync, p, frames);
}

}  // namespace csileak
