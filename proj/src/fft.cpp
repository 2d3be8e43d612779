#include "csileak/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <mutex>

#include "csileak/error.hpp"

namespace csileak {

namespace {
// The FFTW planner is not reentrant.
std::mutex planner_mutex;
}  // namespace

void fft_inplace(std::vector<cplx>& data, bool inverse) {
  if (data.empty()) return;
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex);
    plan = fftw_plan_dft_1d(static_cast<int>(data.size()), buf, buf,
                            inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
  }
  if (!plan) throw Error("fft: planner failed for length " + std::to_string(data.size()));
  fftw_execute(plan);
  std::lock_guard lock(planner_mutex);
  fftw_destroy_plan(plan);
}

std::vector<double> autocorrelation(const std::vector<double>& x, std::size_t max_lag) {
  const std::size_t n = x.size();
  max_lag = std::min(max_lag, n == 0 ? 0 : n - 1);
  // Zero-pad to at least 2n so the circular correlation equals the linear one.
  std::size_t m = 1;
  while (m < 2 * n) m <<= 1;
  std::vector<cplx> buf(m, cplx(0.0, 0.0));
  for (std::size_t i = 0; i < n; ++i) buf[i] = x[i];
  fft_inplace(buf, false);
  for (auto& v : buf) v = cplx(std::norm(v), 0.0);
  fft_inplace(buf, true);
  std::vector<double> r(max_lag + 1);
  for (std::size_t k = 0; k <= max_lag; ++k) r[k] = buf[k].real() / static_cast<double>(m);
  return r;
}

}  // namespace csileak
