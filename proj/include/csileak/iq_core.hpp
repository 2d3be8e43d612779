#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace csileak {

using Sample = std::complex<float>;

/// Uniformly sampled complex baseband capture.
///
/// Invariants (checked on construction): at least one sample, positive
/// sample rate, non-negative center frequency and finite I/Q components.
class IqTrace {
 public:
  IqTrace(std::vector<Sample> samples, double sample_rate_hz,
          double center_frequency_hz = 0.0,
          std::optional<std::int64_t> origin_sample = std::nullopt);

  std::span<const Sample> samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  double sample_rate_hz() const { return sample_rate_hz_; }
  double center_frequency_hz() const { return center_frequency_hz_; }
  std::optional<std::int64_t> origin_sample() const { return origin_sample_; }

 private:
  std::vector<Sample> samples_;
  double sample_rate_hz_;
  double center_frequency_hz_;
  std::optional<std::int64_t> origin_sample_;
};

/// Row-major grayscale image with intensities normalized to [0, 1].
/// Out-of-range values are clamped on construction; NaN is rejected.
class GrayImage {
 public:
  GrayImage(int width, int height, std::vector<double> pixels, int bit_depth_hint = 8);

  static GrayImage filled(int width, int height, double value, int bit_depth_hint = 8);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  int bit_depth_hint() const { return bit_depth_hint_; }

  std::span<const double> pixels() const { return pixels_; }
  double at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const double> row(int y) const {
    return std::span<const double>(pixels_).subspan(static_cast<std::size_t>(y) * width_, width_);
  }

  bool same_shape(const GrayImage& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int width_;
  int height_;
  std::vector<double> pixels_;
  int bit_depth_hint_;
};

/// Linear min-max stretch to [0, 1]. A constant image maps to all zeros.
GrayImage normalize_minmax(const GrayImage& image);
/// Same stretch applied to an unbounded row-major grid.
GrayImage normalize_minmax(int width, int height, std::span<const double> raw);

/// Sidecar record persisted next to every `.iq` file.
struct CaptureMeta {
  double center_frequency_hz = 0.0;
  double sample_rate_hz = 1.0;
  double gain_db = 0.0;
  std::string device_label;
  std::optional<std::int64_t> origin_sample;

  friend bool operator==(const CaptureMeta&, const CaptureMeta&) = default;
};

/// `<stem>.meta` for a given `<stem>.iq` path.
std::filesystem::path meta_path_for(const std::filesystem::path& iq_path);

// IQ payload is interleaved little-endian float32 I,Q. The sidecar is JSON.
// Writes go to a temporary file first so a failure never leaves a partial file.
void write_iq(const IqTrace& trace, const std::filesystem::path& path,
              double gain_db = 0.0, const std::string& device_label = {});
IqTrace read_iq(const std::filesystem::path& path);
CaptureMeta read_capture_meta(const std::filesystem::path& iq_path);

// Binary PGM (P5). maxval 255 stores one byte per pixel, maxval 1023 two
// big-endian bytes; bit_depth_hint selects which one is written.
GrayImage read_image(const std::filesystem::path& path);
void write_image(const GrayImage& image, const std::filesystem::path& path);

GrayImage decode_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);

}  // namespace csileak
