#pragma once

#include <vector>

#include "csileak/iq_core.hpp"
#include "csileak/raster_recon.hpp"

namespace csileak {

struct DemuxResult {
  GrayImage print_image;
  GrayImage vein_image;
  int n_print = 0;
  int n_vein = 0;
  int parity_offset = 0;  // frames with (k + parity_offset) % 2 == 0 are PRINT
};

/// Splits the first min(2 * frames_to_average, detected) frames by parity and
/// averages each group. Parity is counted from the first detected frame.
DemuxResult demux(std::span<const float> env, const SyncModel& sync, const RasterParams& params, int parity_offset);

/// ||ref_print - vein_recon||^2 + ||ref_vein - print_recon||^2
double misalignment_error(const DemuxResult& result, const GrayImage& ref_print, const GrayImage& ref_vein);

/// ||ref_print - print_recon||^2 + ||ref_vein - vein_recon||^2
double aligned_error(const DemuxResult& result, const GrayImage& ref_print, const GrayImage& ref_vein);

struct ParityDecision {
  int parity = 0;
  bool warning = false;
  // Mean squared deviation of each frame from its group mean, for the
  // alternating split and for a non-alternating control split (pairs).
  double intra_variance = 0.0;
  double control_variance = 0.0;
  double contrast_even = 0.0;
  double contrast_odd = 0.0;
};

/// Groups frames by parity (the split with the lower intra-group variance
/// must be the alternating one) and labels as PRINT the group whose mean
/// image has the higher spatial contrast. Ties, or gaps under 5 %, return
/// parity 0 with the warning set.
ParityDecision auto_parity(std::span<const float> env, const SyncModel& sync, const RasterParams& params);

}  // namespace csileak
