#include "csileak/iq_core.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "csileak/error.hpp"

namespace csileak {

namespace fs = std::filesystem;
using nlohmann::json;

IqTrace::IqTrace(std::vector<Sample> samples, double sample_rate_hz, double center_frequency_hz,
                 std::optional<std::int64_t> origin_sample)
    : samples_(std::move(samples)),
      sample_rate_hz_(sample_rate_hz),
      center_frequency_hz_(center_frequency_hz),
      origin_sample_(origin_sample) {
  if (samples_.empty()) throw Error("IqTrace: at least one sample is required");
  if (!(sample_rate_hz_ > 0.0) || !std::isfinite(sample_rate_hz_))
    throw Error("IqTrace: sample rate must be positive");
  if (!(center_frequency_hz_ >= 0.0) || !std::isfinite(center_frequency_hz_))
    throw Error("IqTrace: center frequency must be non-negative");
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (!std::isfinite(samples_[i].real()) || !std::isfinite(samples_[i].imag()))
      throw Error("IqTrace: non-finite sample at index " + std::to_string(i));
  }
}

GrayImage::GrayImage(int width, int height, std::vector<double> pixels, int bit_depth_hint)
    : width_(width), height_(height), pixels_(std::move(pixels)), bit_depth_hint_(bit_depth_hint) {
  if (width_ <= 0 || height_ <= 0) throw Error("GrayImage: dimensions must be positive");
  if (pixels_.size() != static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_))
    throw Error("GrayImage: pixel count does not match width x height");
  if (bit_depth_hint_ != 8 && bit_depth_hint_ != 10)
    throw Error("GrayImage: bit depth hint must be 8 or 10");
  for (double& p : pixels_) {
    if (std::isnan(p)) throw Error("GrayImage: NaN intensity");
    p = std::clamp(p, 0.0, 1.0);
  }
}

GrayImage GrayImage::filled(int width, int height, double value, int bit_depth_hint) {
  if (width <= 0 || height <= 0) throw Error("GrayImage: dimensions must be positive");
  return GrayImage(width, height,
                   std::vector<double>(static_cast<std::size_t>(width) * height, value),
                   bit_depth_hint);
}

namespace {
std::vector<double> stretch(std::span<const double> px) {
  std::vector<double> out(px.size(), 0.0);
  if (px.empty()) return out;
  auto [lo, hi] = std::minmax_element(px.begin(), px.end());
  const double range = *hi - *lo;
  if (range > 0.0) {
    for (std::size_t i = 0; i < px.size(); ++i) out[i] = std::clamp((px[i] - *lo) / range, 0.0, 1.0);
  }
  return out;
}
}  // namespace

GrayImage normalize_minmax(const GrayImage& image) {
  return GrayImage(image.width(), image.height(), stretch(image.pixels()), image.bit_depth_hint());
}

GrayImage normalize_minmax(int width, int height, std::span<const double> raw) {
  if (raw.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
    throw Error("normalize_minmax: grid size does not match dimensions");
  for (double v : raw)
    if (!std::isfinite(v)) throw Error("normalize_minmax: non-finite value");
  return GrayImage(width, height, stretch(raw));
}

// ---------------------------------------------------------------------------
// IQ files

fs::path meta_path_for(const fs::path& iq_path) {
  fs::path p = iq_path;
  p.replace_extension(".meta");
  return p;
}

namespace {

void put_f32le(std::vector<char>& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  char raw[4];
  std::memcpy(raw, &bits, 4);
  out.insert(out.end(), raw, raw + 4);
}

float get_f32le(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

// Write `bytes` to `path` through a sibling temp file and rename.
void atomic_write(const fs::path& path, const char* data, std::size_t n) {
  if (path.empty()) throw Error("write: empty path");
  fs::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("write: cannot open '" + path.string() + "' for writing");
    os.write(data, static_cast<std::streamsize>(n));
    os.flush();
    if (!os) {
      os.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error("write: I/O failure on '" + path.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("write: cannot finalize '" + path.string() + "'");
  }
}

std::vector<char> slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("read: cannot open '" + path.string() + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

void write_iq(const IqTrace& trace, const fs::path& path, double gain_db,
              const std::string& device_label) {
  std::vector<char> payload;
  payload.reserve(trace.size() * 8);
  for (const Sample& s : trace.samples()) {
    put_f32le(payload, s.real());
    put_f32le(payload, s.imag());
  }

  json meta = {
      {"center_frequency_hz", trace.center_frequency_hz()},
      {"sample_rate_hz", trace.sample_rate_hz()},
      {"gain_db", gain_db},
      {"device_label", device_label},
  };
  if (trace.origin_sample()) meta["origin_sample"] = *trace.origin_sample();
  const std::string text = meta.dump(2) + "\n";

  atomic_write(path, payload.data(), payload.size());
  try {
    atomic_write(meta_path_for(path), text.data(), text.size());
  } catch (...) {
    std::error_code ec;
    fs::remove(path, ec);
    throw;
  }
}

CaptureMeta read_capture_meta(const fs::path& iq_path) {
  const fs::path mp = meta_path_for(iq_path);
  if (!fs::exists(mp)) throw Error("read_iq: missing sidecar '" + mp.string() + "'");
  std::ifstream is(mp);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error("read_iq: malformed sidecar '" + mp.string() + "': " + e.what());
  }
  CaptureMeta m;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      if (k == "center_frequency_hz") m.center_frequency_hz = it->get<double>();
      else if (k == "sample_rate_hz") m.sample_rate_hz = it->get<double>();
      else if (k == "gain_db") m.gain_db = it->get<double>();
      else if (k == "device_label") m.device_label = it->get<std::string>();
      else if (k == "origin_sample") m.origin_sample = it->get<std::int64_t>();
      else throw Error("read_iq: unknown sidecar key '" + k + "' in '" + mp.string() + "'");
    }
    if (!j.contains("sample_rate_hz")) throw Error("read_iq: sidecar lacks sample_rate_hz");
  } catch (const json::exception& e) {
    throw Error("read_iq: bad sidecar field in '" + mp.string() + "': " + e.what());
  }
  if (!(m.sample_rate_hz > 0.0)) throw Error("read_iq: sidecar sample rate must be positive");
  return m;
}

IqTrace read_iq(const fs::path& path) {
  std::vector<char> raw = slurp(path);
  if (raw.size() % 8 != 0)
    throw Error("read_iq: '" + path.string() + "' is truncated (" + std::to_string(raw.size()) +
                " bytes, not a multiple of 8)");
  if (raw.empty()) throw Error("read_iq: '" + path.string() + "' holds no samples");
  const CaptureMeta meta = read_capture_meta(path);

  std::vector<Sample> samples(raw.size() / 8);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const float re = get_f32le(raw.data() + 8 * i);
    const float im = get_f32le(raw.data() + 8 * i + 4);
    if (!std::isfinite(re) || !std::isfinite(im))
      throw Error("read_iq: non-finite sample " + std::to_string(i) + " in '" + path.string() + "'");
    samples[i] = {re, im};
  }
  return IqTrace(std::move(samples), meta.sample_rate_hz, meta.center_frequency_hz,
                 meta.origin_sample);
}

// ---------------------------------------------------------------------------
// PGM

namespace {

class PgmHeaderReader {
 public:
  explicit PgmHeaderReader(std::span<const std::uint8_t> b) : bytes_(b) {}

  std::string token() {
    skip_space_and_comments();
    std::string t;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) t.push_back(static_cast<char>(bytes_[pos_++]));
    return t;
  }

  int integer(const char* what) {
    const std::string t = token();
    if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
        t.size() > 9)
      throw Error(std::string("PGM: bad ") + what + " token '" + t + "'");
    return std::stoi(t);
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw Error("PGM: missing raster separator");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  PgmHeaderReader rd(bytes);
  const std::string magic = rd.token();
  if (magic != "P5") throw Error("PGM: bad magic token '" + magic + "'");
  const int w = rd.integer("width");
  const int h = rd.integer("height");
  const int maxval = rd.integer("maxval");
  if (w <= 0) throw Error("PGM: bad width token '" + std::to_string(w) + "'");
  if (h <= 0) throw Error("PGM: bad height token '" + std::to_string(h) + "'");
  if (maxval != 255 && maxval != 1023)
    throw Error("PGM: bad maxval token '" + std::to_string(maxval) + "' (expected 255 or 1023)");

  const std::size_t off = rd.raster_offset();
  const std::size_t n = static_cast<std::size_t>(w) * h;
  const std::size_t bpp = maxval == 255 ? 1 : 2;
  if (bytes.size() - off < n * bpp) throw Error("PGM: raster shorter than header declares");

  std::vector<double> px(n);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned v = bpp == 1 ? bytes[off + i]
                          : (static_cast<unsigned>(bytes[off + 2 * i]) << 8) | bytes[off + 2 * i + 1];
    if (v > static_cast<unsigned>(maxval)) throw Error("PGM: sample exceeds maxval");
    px[i] = static_cast<double>(v) / maxval;
  }
  return GrayImage(w, h, std::move(px), maxval == 255 ? 8 : 10);
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  const int maxval = image.bit_depth_hint() == 10 ? 1023 : 255;
  const std::string header = "P5\n" + std::to_string(image.width()) + " " +
                             std::to_string(image.height()) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.size() * (maxval == 255 ? 1 : 2));
  for (double p : image.pixels()) {
    const auto q = static_cast<unsigned>(std::lround(p * maxval));
    if (maxval == 255) {
      out.push_back(static_cast<std::uint8_t>(q));
    } else {
      out.push_back(static_cast<std::uint8_t>(q >> 8));
      out.push_back(static_cast<std::uint8_t>(q & 0xFF));
    }
  }
  return out;
}

GrayImage read_image(const fs::path& path) {
  std::vector<char> raw = slurp(path);
  try {
    return decode_pgm(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_image(const GrayImage& image, const fs::path& path) {
  const auto bytes = encode_pgm(image);
  atomic_write(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

}  // namespace csileak
