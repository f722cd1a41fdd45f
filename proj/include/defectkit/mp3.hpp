// SPDX-License-Identifier: Apache-2.0
//
// MPEG audio frame parsing and format-aware byte corruption.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "defectkit/wave.hpp"

namespace defectkit::mp3 {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

enum class MpegVersion { Mpeg1, Mpeg2, Mpeg2_5 };
enum class Layer { I, II, III };
enum class ChannelMode { Stereo, JointStereo, DualChannel, Mono };

struct FrameHeader {
  MpegVersion version = MpegVersion::Mpeg1;
  Layer layer = Layer::III;
  bool protection_absent = true;
  int bitrate_kbps = 0;
  int sample_rate_hz = 0;
  bool padding = false;
  ChannelMode channel_mode = ChannelMode::Stereo;

  bool operator==(const FrameHeader&) const = default;
};

enum class HeaderStatus {
  Ok,
  NoSync,
  ReservedVersion,
  ReservedLayer,
  FreeFormatBitrate,
  ReservedBitrate,
  ReservedSampleRate,
};

const char* to_string(HeaderStatus s);

struct HeaderParse {
  HeaderStatus status = HeaderStatus::NoSync;
  FrameHeader header;

  bool ok() const { return status == HeaderStatus::Ok; }
};

/// Decodes a 4-byte frame header. Free-format streams are rejected.
HeaderParse parse_header(ByteView bytes);

/// Serializes a header back to 4 bytes (private/copyright/original/emphasis
/// bits cleared, mode extension zero).
std::array<std::uint8_t, 4> encode_header(const FrameHeader& h);

int frame_length_bytes(const FrameHeader& h);
int samples_per_frame(const FrameHeader& h);

struct FrameEntry {
  std::size_t offset = 0;
  std::size_t length = 0;
  FrameHeader header;
};

struct FrameIndex {
  std::vector<FrameEntry> frames;
  std::size_t leading_skip = 0;
  std::size_t trailing_skip = 0;
  /// Ordinal of a Xing/Info/VBRI metadata frame, when the first frame is one.
  std::optional<std::size_t> metadata_frame;
};

/// Indexes the frames of a stream. Throws DataError when no frame is found.
FrameIndex walk_frames(ByteView stream);

/// Re-assembles leading bytes, frames and trailing bytes from the index.
Bytes emit(ByteView stream, const FrameIndex& idx);

struct CorruptionConfig {
  double p_glitch = 0.05;
  double overwrite_mean = 120.0;
  double overwrite_std = 60.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct CorruptionRecord {
  std::size_t frame_ordinal = 0;
  std::size_t start_byte_in_frame = 0;
  std::size_t length_bytes = 0;
  double selection_draw = 0.0;  ///< uniform draw that selected the frame
  double length_draw = 0.0;     ///< normal draw before rounding and clamping
  std::uint64_t byte_seed = 0;  ///< seed of the overwrite byte sequence
  bool survived = true;
};

struct CorruptionResult {
  Bytes bytes;
  std::vector<CorruptionRecord> records;
};

/// Overwrite length for a given normal draw: rounded, clamped to [1, frame_length].
std::size_t clamp_overwrite_length(double draw, std::size_t frame_length);

/// Writes the record's random bytes into `bytes` at its frame position.
void apply_record(std::span<std::uint8_t> bytes, const FrameIndex& idx, const CorruptionRecord& rec);

CorruptionResult corrupt_stream(ByteView stream, const FrameIndex& idx, const CorruptionConfig& cfg);

/// Black-box MP3 decoder. Returns nullopt when decoding fails.
class Decoder {
 public:
  virtual ~Decoder() = default;
  virtual std::optional<Waveform> decode(ByteView mp3) const = 0;
};

struct ValidatedCorruption {
  Bytes bytes;
  std::vector<CorruptionRecord> records;
  Waveform degraded;
  Waveform clean;
  FrameIndex index;
};

/// Applies corruptions frame by frame, decoding the whole stream after each
/// one and reverting any corruption that breaks decoding or changes the
/// decoded length.
ValidatedCorruption validated_corrupt(ByteView stream, const CorruptionConfig& cfg,
                                      const Decoder& decoder);

/// Constant-bitrate MPEG-1 Layer III stream with random payload bytes, for
/// exercising the parser and corruption statistics without an encoder.
Bytes synthesize_cbr_stream(std::size_t frame_count, int bitrate_kbps, int sample_rate_hz,
                            std::uint64_t seed);

nlohmann::json to_json(const CorruptionRecord& r);
nlohmann::json to_json(const CorruptionConfig& c);
CorruptionRecord record_from_json(const nlohmann::json& j);

}  // namespace defectkit::mp3
