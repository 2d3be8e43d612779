#include "csileak/csi2_codec.hpp"

#include <cmath>

#include "csileak/error.hpp"

namespace csileak {

LineTiming LineTiming::defaults_for_width(int width, double bit_rate_hz) {
  LineTiming t;
  t.bit_rate_hz = bit_rate_hz;
  t.header_bits = 64;
  t.trailer_bits = 64;
  t.line_blank_bits = payload_bits_per_line(width) / 4;
  t.frame_blank_bits = 4 * bits_per_line(t, width);
  return t;
}

void LineTiming::validate() const {
  if (!(bit_rate_hz > 0.0) || !std::isfinite(bit_rate_hz)) throw Error("LineTiming: bit rate must be positive");
  if (line_blank_bits < 0 || frame_blank_bits < 0 || header_bits < 0 || trailer_bits < 0)
    throw Error("LineTiming: bit counts must be non-negative");
}

int padded_width(int width) { return (width + 3) / 4 * 4; }

std::int64_t payload_bits_per_line(int width) { return static_cast<std::int64_t>(padded_width(width)) * 10; }

std::int64_t bits_per_line(const LineTiming& t, int width) {
  return t.header_bits + payload_bits_per_line(width) + t.trailer_bits + t.line_blank_bits;
}

std::int64_t bits_per_frame(const LineTiming& t, int width, int height) {
  return t.frame_blank_bits + bits_per_line(t, width) * height;
}

std::vector<std::uint8_t> pack_raw10(std::span<const std::uint16_t> pixels) {
  if (pixels.size() % 4 != 0)
    throw Error("pack_raw10: pixel count " + std::to_string(pixels.size()) + " is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(pixels.size() / 4 * 5);
  for (std::size_t g = 0; g < pixels.size(); g += 4) {
    std::uint8_t lsb = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      const std::uint16_t p = pixels[g + j];
      if (p > 1023) throw Error("pack_raw10: value " + std::to_string(p) + " exceeds 10 bits");
      out.push_back(static_cast<std::uint8_t>(p >> 2));
      lsb |= static_cast<std::uint8_t>((p & 3u) << (2 * j));
    }
    out.push_back(lsb);
  }
  return out;
}

std::vector<std::uint16_t> unpack_raw10(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 5 != 0)
    throw Error("unpack_raw10: byte count " + std::to_string(bytes.size()) + " is not a multiple of 5");
  std::vector<std::uint16_t> out;
  out.reserve(bytes.size() / 5 * 4);
  for (std::size_t g = 0; g < bytes.size(); g += 5) {
    const std::uint8_t lsb = bytes[g + 4];
    for (std::size_t j = 0; j < 4; ++j)
      out.push_back(static_cast<std::uint16_t>((bytes[g + j] << 2) | ((lsb >> (2 * j)) & 3u)));
  }
  return out;
}

std::vector<std::uint16_t> quantize10(const GrayImage& image) {
  std::vector<std::uint16_t> out(image.size());
  auto px = image.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = static_cast<std::uint16_t>(std::lround(px[i] * 1023.0));
  return out;
}

namespace {

void append_sync(std::vector<std::uint8_t>& bits, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) bits.push_back((i & 1) == 0 ? 1 : 0);
}

void append_zeros(std::vector<std::uint8_t>& bits, std::int64_t n) { bits.insert(bits.end(), n, 0); }

void append_bytes_msb_first(std::vector<std::uint8_t>& bits, std::span<const std::uint8_t> bytes) {
  for (std::uint8_t b : bytes)
    for (int k = 7; k >= 0; --k) bits.push_back((b >> k) & 1);
}

}  // namespace

PacketStream packetize(std::span<const GrayImage> frames, const LineTiming& timing, Schedule schedule,
                       std::int64_t first_frame_index) {
  timing.validate();
  if (frames.empty()) throw Error("packetize: no frames");
  if (first_frame_index < 0) throw Error("packetize: negative frame index");
  const int w = frames.front().width();
  const int h = frames.front().height();
  for (const auto& f : frames)
    if (f.width() != w || f.height() != h) throw Error("packetize: frame dimensions differ");

  PacketStream s;
  s.width = w;
  s.height = h;
  const int pw = padded_width(w);
  s.bits.reserve(static_cast<std::size_t>(bits_per_frame(timing, w, h) * frames.size() + timing.frame_blank_bits));

  std::vector<std::uint16_t> row(pw, 0);
  for (std::size_t fi = 0; fi < frames.size(); ++fi) {
    append_zeros(s.bits, timing.frame_blank_bits);
    s.frame_starts.push_back(static_cast<std::int64_t>(s.bits.size()));
    const std::int64_t counter = first_frame_index + static_cast<std::int64_t>(fi);
    s.modality_schedule.push_back(schedule == Schedule::Alternating && counter % 2 == 1 ? Modality::Vein
                                                                                         : Modality::Print);
    const auto codes = quantize10(frames[fi]);
    for (int y = 0; y < h; ++y) {
      std::copy(codes.begin() + static_cast<std::ptrdiff_t>(y) * w,
                codes.begin() + static_cast<std::ptrdiff_t>(y + 1) * w, row.begin());
      std::fill(row.begin() + w, row.end(), 0);
      append_sync(s.bits, timing.header_bits);
      s.line_starts.push_back(static_cast<std::int64_t>(s.bits.size()));
      append_bytes_msb_first(s.bits, pack_raw10(row));
      append_sync(s.bits, timing.trailer_bits);
      append_zeros(s.bits, timing.line_blank_bits);
    }
  }
  append_zeros(s.bits, timing.frame_blank_bits);
  return s;
}

std::vector<std::uint16_t> line_pixels(const PacketStream& stream, std::size_t line_index) {
  if (line_index >= stream.line_starts.size()) throw Error("line_pixels: line index out of range");
  const std::int64_t start = stream.line_starts[line_index];
  const std::int64_t nbits = payload_bits_per_line(stream.width);
  if (start + nbits > static_cast<std::int64_t>(stream.bits.size())) throw Error("line_pixels: truncated stream");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(nbits / 8));
  for (std::size_t b = 0; b < bytes.size(); ++b) {
    std::uint8_t v = 0;
    for (int k = 0; k < 8; ++k) v = static_cast<std::uint8_t>((v << 1) | stream.bits[start + 8 * b + k]);
    bytes[b] = v;
  }
  auto px = unpack_raw10(bytes);
  px.resize(stream.width);
  return px;
}

std::vector<GrayImage> depacketize(const PacketStream& stream, const LineTiming& timing) {
  timing.validate();
  std::vector<GrayImage> out;
  const std::size_t h = static_cast<std::size_t>(stream.height);
  for (std::size_t f = 0; f < stream.frame_count(); ++f) {
    std::vector<double> px;
    px.reserve(static_cast<std::size_t>(stream.width) * h);
    for (std::size_t y = 0; y < h; ++y)
      for (std::uint16_t v : line_pixels(stream, f * h + y)) px.push_back(v / 1023.0);
    out.emplace_back(stream.width, stream.height, std::move(px), 10);
  }
  return out;
}

}  // namespace csileak
