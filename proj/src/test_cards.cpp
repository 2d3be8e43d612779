#include "csileak/test_cards.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "csileak/error.hpp"

namespace csileak::cards {

namespace {

struct Stroke {
  // Quadratic Bezier in unit coordinates.
  std::array<double, 2> p0, p1, p2;
  double width;  // gaussian sigma, fraction of the image size
  double depth;
};

double bezier_distance(double x, double y, const Stroke& s) {
  double best = 1e9;
  constexpr int kSteps = 96;
  for (int i = 0; i <= kSteps; ++i) {
    const double t = static_cast<double>(i) / kSteps;
    const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
    const double bx = a * s.p0[0] + b * s.p1[0] + c * s.p2[0];
    const double by = a * s.p0[1] + b * s.p1[1] + c * s.p2[1];
    best = std::min(best, std::hypot(x - bx, y - by));
  }
  return best;
}

GrayImage render(int w, int h, double background, const std::vector<Stroke>& strokes) {
  if (w < 1 || h < 1) throw Error("test card: dimensions must be positive");
  std::vector<double> px(static_cast<std::size_t>(w) * h);
  const double scale = std::min(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double ux = (x + 0.5) / w, uy = (y + 0.5) / h;
      double v = background;
      for (const auto& s : strokes) {
        const double d = bezier_distance(ux, uy, s) * scale;
        const double sw = s.width * scale;
        v -= s.depth * std::exp(-d * d / (2 * sw * sw));
      }
      px[static_cast<std::size_t>(y) * w + x] = std::clamp(v, 0.0, 1.0);
    }
  return GrayImage(w, h, std::move(px));
}

}  // namespace

GrayImage print_card(int w, int h) {
  const std::vector<Stroke> strokes = {
      {{0.12, 0.30}, {0.50, 0.18}, {0.88, 0.34}, 0.018, 0.62},  // heart line
      {{0.14, 0.46}, {0.45, 0.36}, {0.80, 0.56}, 0.016, 0.58},  // head line
      {{0.40, 0.22}, {0.18, 0.55}, {0.38, 0.88}, 0.018, 0.60},  // life line
      {{0.62, 0.86}, {0.58, 0.60}, {0.66, 0.30}, 0.012, 0.40},
      {{0.70, 0.70}, {0.78, 0.64}, {0.86, 0.72}, 0.010, 0.30},
      {{0.22, 0.70}, {0.28, 0.76}, {0.26, 0.84}, 0.010, 0.28},
  };
  return render(w, h, 0.88, strokes);
}

GrayImage vein_card(int w, int h) {
  const std::vector<Stroke> strokes = {
      {{0.50, 0.90}, {0.46, 0.60}, {0.52, 0.12}, 0.035, 0.28},
      {{0.48, 0.58}, {0.30, 0.45}, {0.16, 0.20}, 0.028, 0.24},
      {{0.49, 0.50}, {0.70, 0.40}, {0.84, 0.16}, 0.028, 0.24},
      {{0.47, 0.74}, {0.28, 0.72}, {0.14, 0.84}, 0.024, 0.20},
      {{0.51, 0.30}, {0.64, 0.22}, {0.70, 0.10}, 0.022, 0.18},
  };
  return render(w, h, 0.66, strokes);
}

GrayImage ramp_card(int w, int h, double row_step) {
  if (w < 1 || h < 1) throw Error("test card: dimensions must be positive");
  std::vector<double> px(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double p = std::round(y * row_step) + x;
      if (p > 1023.0) throw Error("ramp card: values exceed 10 bits");
      px[static_cast<std::size_t>(y) * w + x] = p / 1023.0;
    }
  return GrayImage(w, h, std::move(px), 10);
}

GrayImage two_level_card(int w, int h, double lo, double hi) {
  std::vector<double> px(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) px[static_cast<std::size_t>(y) * w + x] = x < w / 2 ? lo : hi;
  return GrayImage(w, h, std::move(px));
}

GrayImage half_flat_card(int w, int h) {
  std::vector<double> px(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      px[static_cast<std::size_t>(y) * w + x] = x < w / 2 ? 0.5 : ((x + y) % 2 ? 0.8 : 0.2);
  return GrayImage(w, h, std::move(px));
}

GrayImage checkerboard_card(int w, int h, int cell, double lo, double hi) {
  if (cell < 1) throw Error("checkerboard: cell must be positive");
  std::vector<double> px(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      px[static_cast<std::size_t>(y) * w + x] = ((x / cell + y / cell) % 2) ? hi : lo;
  return GrayImage(w, h, std::move(px));
}

}  // namespace csileak::cards
