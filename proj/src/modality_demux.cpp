#include "csileak/modality_demux.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "csileak/error.hpp"
#include "csileak/kernels.hpp"

namespace csileak {

namespace {

constexpr double kGapTolerance = 0.05;

std::size_t frames_used(const SyncModel& sync, const RasterParams& params) {
  return std::min<std::size_t>(2 * static_cast<std::size_t>(params.frames_to_average), sync.frame_count());
}

double sq_dist(const GrayImage& a, const GrayImage& b, const char* what) {
  if (!a.same_shape(b)) throw Error(std::string(what) + ": dimension mismatch");
  return kernels::squared_distance(a.pixels(), b.pixels());
}

std::vector<double> normalized(std::vector<double> raw) {
  double mean = 0.0;
  for (double v : raw) mean += v;
  mean /= static_cast<double>(raw.size());
  double var = 0.0;
  for (double v : raw) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(raw.size()));
  for (double& v : raw) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return raw;
}

// Mean squared deviation of members from their group centroid.
double spread(const std::vector<std::vector<double>>& frames, const std::vector<int>& group) {
  const std::size_t px = frames.front().size();
  double total = 0.0;
  for (int g = 0; g < 2; ++g) {
    std::vector<double> c(px, 0.0);
    double n = 0.0;
    for (std::size_t k = 0; k < frames.size(); ++k) {
      if (group[k] != g) continue;
      kernels::axpy(1.0, frames[k], c);
      n += 1.0;
    }
    if (n == 0.0) continue;
    for (double& v : c) v /= n;
    for (std::size_t k = 0; k < frames.size(); ++k)
      if (group[k] == g) total += kernels::squared_distance(frames[k], c);
  }
  return total / static_cast<double>(frames.size() * px);
}

// Spatial coefficient of variation of the mean raw image.
double contrast(const std::vector<std::vector<double>>& raw, int parity) {
  const std::size_t px = raw.front().size();
  std::vector<double> m(px, 0.0);
  double n = 0.0;
  for (std::size_t k = static_cast<std::size_t>(parity); k < raw.size(); k += 2) {
    kernels::axpy(1.0, raw[k], m);
    n += 1.0;
  }
  double mean = 0.0;
  for (double& v : m) mean += (v /= n);
  mean /= static_cast<double>(px);
  double var = 0.0;
  for (double v : m) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(px));
  return mean != 0.0 ? sd / std::abs(mean) : sd;
}

}  // namespace

DemuxResult demux(std::span<const float> env, const SyncModel& sync, const RasterParams& params, int parity_offset) {
  if (parity_offset != 0 && parity_offset != 1) throw Error("demux: parity offset must be 0 or 1");
  params.validate();
  const std::size_t total = frames_used(sync, params);
  if (total < 2) throw Error("demux: at least 2 frames are required, found " + std::to_string(total));
  std::vector<std::size_t> print, vein;
  for (std::size_t k = 0; k < total; ++k)
    ((k + static_cast<std::size_t>(parity_offset)) % 2 == 0 ? print : vein).push_back(k);
  return DemuxResult{average_frame_set(env, sync, params, print), average_frame_set(env, sync, params, vein),
                     static_cast<int>(print.size()), static_cast<int>(vein.size()), parity_offset};
}

double misalignment_error(const DemuxResult& r, const GrayImage& ref_print, const GrayImage& ref_vein) {
  return sq_dist(ref_print, r.vein_image, "misalignment_error") +
         sq_dist(ref_vein, r.print_image, "misalignment_error");
}

double aligned_error(const DemuxResult& r, const GrayImage& ref_print, const GrayImage& ref_vein) {
  return sq_dist(ref_print, r.print_image, "aligned_error") + sq_dist(ref_vein, r.vein_image, "aligned_error");
}

ParityDecision auto_parity(std::span<const float> env, const SyncModel& sync, const RasterParams& params) {
  params.validate();
  const std::size_t total = frames_used(sync, params);
  if (total < 4) throw Error("auto_parity: at least 4 frames are required, found " + std::to_string(total));

  std::vector<std::vector<double>> raw, norm;
  for (std::size_t k = 0; k < total; ++k) {
    raw.push_back(rasterize_raw(env, sync, params, k));
    norm.push_back(normalized(raw.back()));
  }
  std::vector<int> alternating(total), pairs(total);
  for (std::size_t k = 0; k < total; ++k) {
    alternating[k] = static_cast<int>(k % 2);
    pairs[k] = static_cast<int>((k / 2) % 2);
  }

  ParityDecision d;
  d.intra_variance = spread(norm, alternating);
  d.control_variance = spread(norm, pairs);
  d.contrast_even = contrast(raw, 0);
  d.contrast_odd = contrast(raw, 1);

  const bool grouped = d.intra_variance < (1.0 - kGapTolerance) * d.control_variance;
  const double hi = std::max(d.contrast_even, d.contrast_odd);
  const bool separated = hi > 0.0 && std::abs(d.contrast_even - d.contrast_odd) >= kGapTolerance * hi;
  if (!grouped || !separated) {
    d.parity = 0;
    d.warning = true;
    return d;
  }
  d.parity = d.contrast_even >= d.contrast_odd ? 0 : 1;
  return d;
}

}  // namespace csileak
