#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "csileak/iq_core.hpp"

namespace csileak {

enum class Modality : std::uint8_t { Print = 0, Vein = 1 };

enum class Schedule { Single, Alternating };

/// Serial timing of one image line on the link, in bit periods.
///
/// A line is `header_bits` of sync pattern, the RAW10 payload, `trailer_bits`
/// of sync pattern and `line_blank_bits` of idle. Every frame is preceded by
/// `frame_blank_bits` of idle, and one more frame blank closes the stream.
struct LineTiming {
  double bit_rate_hz = 200e6;
  std::int64_t line_blank_bits = 0;
  std::int64_t frame_blank_bits = 0;
  std::int64_t header_bits = 0;
  std::int64_t trailer_bits = 0;

  // 64-bit header and trailer, line blank = 25% of the payload, frame blank
  // = 4 full line durations.
  static LineTiming defaults_for_width(int width, double bit_rate_hz = 200e6);

  void validate() const;
};

/// Pixels per line after right-padding to a whole RAW10 group.
int padded_width(int width);
std::int64_t payload_bits_per_line(int width);
std::int64_t bits_per_line(const LineTiming& t, int width);
std::int64_t bits_per_frame(const LineTiming& t, int width, int height);

/// Serialized link traffic with its framing markers (bit indices).
struct PacketStream {
  std::vector<std::uint8_t> bits;           // one 0/1 entry per bit period
  std::vector<std::int64_t> line_starts;    // first payload bit of every line
  std::vector<std::int64_t> frame_starts;   // first header bit of every frame
  std::vector<Modality> modality_schedule;  // one entry per frame
  int width = 0;
  int height = 0;

  std::size_t frame_count() const { return frame_starts.size(); }
};

// Four 10-bit pixels -> four MSB bytes followed by one byte of packed LSBs
// (p0 in bits 1:0 up to p3 in bits 7:6).
std::vector<std::uint8_t> pack_raw10(std::span<const std::uint16_t> pixels);
std::vector<std::uint16_t> unpack_raw10(std::span<const std::uint8_t> bytes);

/// Round-to-nearest 10-bit code of each intensity.
std::vector<std::uint16_t> quantize10(const GrayImage& image);

/// Serialize frames onto the link. `first_frame_index` is the device's frame
/// counter for frames[0]; with an alternating schedule even counters carry
/// the print modality and odd ones the vein modality.
PacketStream packetize(std::span<const GrayImage> frames, const LineTiming& timing,
                       Schedule schedule, std::int64_t first_frame_index = 0);

/// Decode every frame of a stream back to 10-bit images (padding dropped).
std::vector<GrayImage> depacketize(const PacketStream& stream, const LineTiming& timing);

/// 10-bit pixel codes of one line, read back from the serialized payload.
std::vector<std::uint16_t> line_pixels(const PacketStream& stream, std::size_t line_index);

}  // namespace csileak
