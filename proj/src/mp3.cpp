// SPDX-License-Identifier: Apache-2.0

#include "defectkit/mp3.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "defectkit/error.hpp"
#include "defectkit/rng.hpp"

namespace defectkit::mp3 {

namespace {

// [version: 0 = MPEG1, 1 = MPEG2/2.5][layer: 0 = I, 1 = II, 2 = III][index]
constexpr int kBitrates[2][3][16] = {
    {{0, 32, 64, 96, 128, 160, 192, 224, 256, 288, 320, 352, 384, 416, 448, -1},
     {0, 32, 48, 56, 64, 80, 96, 112, 128, 160, 192, 224, 256, 320, 384, -1},
     {0, 32, 40, 48, 56, 64, 80, 96, 112, 128, 160, 192, 224, 256, 320, -1}},
    {{0, 32, 48, 56, 64, 80, 96, 112, 128, 144, 160, 176, 192, 224, 256, -1},
     {0, 8, 16, 24, 32, 40, 48, 56, 64, 80, 96, 112, 128, 144, 160, -1},
     {0, 8, 16, 24, 32, 40, 48, 56, 64, 80, 96, 112, 128, 144, 160, -1}},
};

constexpr int kSampleRates[3][3] = {
    {44100, 48000, 32000},  // MPEG1
    {22050, 24000, 16000},  // MPEG2
    {11025, 12000, 8000},   // MPEG2.5
};

int version_row(MpegVersion v) { return v == MpegVersion::Mpeg1 ? 0 : 1; }
int layer_col(Layer l) { return l == Layer::I ? 0 : (l == Layer::II ? 1 : 2); }

int bitrate_index(const FrameHeader& h) {
  const auto& row = kBitrates[version_row(h.version)][layer_col(h.layer)];
  for (int i = 1; i < 15; ++i) {
    if (row[i] == h.bitrate_kbps) return i;
  }
  throw UsageError("mp3", "bitrate " + std::to_string(h.bitrate_kbps) + " kbps not encodable");
}

int sample_rate_index(const FrameHeader& h) {
  const auto& row = kSampleRates[static_cast<int>(h.version)];
  for (int i = 0; i < 3; ++i) {
    if (row[i] == h.sample_rate_hz) return i;
  }
  throw UsageError("mp3", "sample rate " + std::to_string(h.sample_rate_hz) + " not encodable");
}

bool compatible(const FrameHeader& a, const FrameHeader& b) {
  return a.version == b.version && a.layer == b.layer && a.sample_rate_hz == b.sample_rate_hz;
}

bool id3v1_at(ByteView s, std::size_t pos) {
  return s.size() - pos == 128 && std::memcmp(s.data() + pos, "TAG", 3) == 0;
}

std::optional<FrameHeader> header_at(ByteView s, std::size_t pos) {
  if (pos + 4 > s.size()) return std::nullopt;
  const auto p = parse_header(s.subspan(pos, 4));
  if (!p.ok()) return std::nullopt;
  return p.header;
}

// Frame at `pos` is accepted when its computed end lands on end-of-stream, an
// ID3v1 tag, or another compatible header.
bool confirmed(ByteView s, std::size_t pos, const FrameHeader& h) {
  const std::size_t end = pos + static_cast<std::size_t>(frame_length_bytes(h));
  if (end > s.size()) return false;
  if (end == s.size() || id3v1_at(s, end)) return true;
  const auto next = header_at(s, end);
  return next && compatible(*next, h);
}

std::size_t id3v2_size(ByteView s) {
  if (s.size() < 10 || std::memcmp(s.data(), "ID3", 3) != 0) return 0;
  for (int i = 6; i < 10; ++i) {
    if (s[i] & 0x80) return 0;  // not syncsafe; not a real tag
  }
  std::size_t size = (static_cast<std::size_t>(s[6]) << 21) | (static_cast<std::size_t>(s[7]) << 14) |
                     (static_cast<std::size_t>(s[8]) << 7) | s[9];
  size += 10;
  if (s[5] & 0x10) size += 10;  // footer present
  return std::min(size, s.size());
}

bool is_metadata_frame(ByteView s, const FrameEntry& f) {
  const auto frame = s.subspan(f.offset, f.length);
  const std::size_t limit = std::min<std::size_t>(frame.size(), 64);
  for (std::size_t i = 4; i + 4 <= limit; ++i) {
    if (std::memcmp(frame.data() + i, "Xing", 4) == 0 || std::memcmp(frame.data() + i, "Info", 4) == 0) {
      return true;
    }
  }
  return frame.size() >= 40 && std::memcmp(frame.data() + 36, "VBRI", 4) == 0;
}

}  // namespace

const char* to_string(HeaderStatus s) {
  switch (s) {
    case HeaderStatus::Ok: return "ok";
    case HeaderStatus::NoSync: return "no frame sync";
    case HeaderStatus::ReservedVersion: return "reserved MPEG version";
    case HeaderStatus::ReservedLayer: return "reserved layer";
    case HeaderStatus::FreeFormatBitrate: return "free-format bitrate (unsupported)";
    case HeaderStatus::ReservedBitrate: return "reserved bitrate index";
    case HeaderStatus::ReservedSampleRate: return "reserved sample-rate index";
  }
  return "unknown";
}

HeaderParse parse_header(ByteView b) {
  HeaderParse r;
  if (b.size() < 4 || b[0] != 0xFF || (b[1] & 0xE0) != 0xE0) return r;

  const int version_bits = (b[1] >> 3) & 0x3;
  const int layer_bits = (b[1] >> 1) & 0x3;
  if (version_bits == 1) {
    r.status = HeaderStatus::ReservedVersion;
    return r;
  }
  if (layer_bits == 0) {
    r.status = HeaderStatus::ReservedLayer;
    return r;
  }
  FrameHeader& h = r.header;
  h.version = version_bits == 3 ? MpegVersion::Mpeg1 : (version_bits == 2 ? MpegVersion::Mpeg2 : MpegVersion::Mpeg2_5);
  h.layer = layer_bits == 3 ? Layer::I : (layer_bits == 2 ? Layer::II : Layer::III);
  h.protection_absent = (b[1] & 0x1) != 0;

  const int br_index = b[2] >> 4;
  const int sr_index = (b[2] >> 2) & 0x3;
  if (br_index == 0) {
    r.status = HeaderStatus::FreeFormatBitrate;
    return r;
  }
  if (br_index == 15) {
    r.status = HeaderStatus::ReservedBitrate;
    return r;
  }
  if (sr_index == 3) {
    r.status = HeaderStatus::ReservedSampleRate;
    return r;
  }
  h.bitrate_kbps = kBitrates[version_row(h.version)][layer_col(h.layer)][br_index];
  h.sample_rate_hz = kSampleRates[static_cast<int>(h.version)][sr_index];
  h.padding = (b[2] & 0x2) != 0;
  h.channel_mode = static_cast<ChannelMode>(b[3] >> 6);
  r.status = HeaderStatus::Ok;
  return r;
}

std::array<std::uint8_t, 4> encode_header(const FrameHeader& h) {
  const int version_bits = h.version == MpegVersion::Mpeg1 ? 3 : (h.version == MpegVersion::Mpeg2 ? 2 : 0);
  const int layer_bits = h.layer == Layer::I ? 3 : (h.layer == Layer::II ? 2 : 1);
  std::array<std::uint8_t, 4> out{};
  out[0] = 0xFF;
  out[1] = static_cast<std::uint8_t>(0xE0 | (version_bits << 3) | (layer_bits << 1) | (h.protection_absent ? 1 : 0));
  out[2] = static_cast<std::uint8_t>((bitrate_index(h) << 4) | (sample_rate_index(h) << 2) | (h.padding ? 2 : 0));
  out[3] = static_cast<std::uint8_t>(static_cast<int>(h.channel_mode) << 6);
  return out;
}

int samples_per_frame(const FrameHeader& h) {
  if (h.layer == Layer::I) return 384;
  if (h.layer == Layer::II || h.version == MpegVersion::Mpeg1) return 1152;
  return 576;
}

int frame_length_bytes(const FrameHeader& h) {
  const long bps = static_cast<long>(h.bitrate_kbps) * 1000;
  const int pad = h.padding ? 1 : 0;
  if (h.layer == Layer::I) return static_cast<int>((12 * bps / h.sample_rate_hz + pad) * 4);
  const long slots = (h.layer == Layer::III && h.version != MpegVersion::Mpeg1) ? 72 : 144;
  return static_cast<int>(slots * bps / h.sample_rate_hz + pad);
}

FrameIndex walk_frames(ByteView s) {
  FrameIndex idx;
  std::size_t pos = id3v2_size(s);

  std::optional<FrameHeader> first;
  for (; pos + 4 <= s.size(); ++pos) {
    auto h = header_at(s, pos);
    if (h && confirmed(s, pos, *h)) {
      first = h;
      break;
    }
  }
  if (!first) throw DataError("mp3", "no valid MPEG audio frame found in stream");
  idx.leading_skip = pos;

  while (pos + 4 <= s.size()) {
    auto h = header_at(s, pos);
    if (!h || !compatible(*h, *first)) break;
    const auto len = static_cast<std::size_t>(frame_length_bytes(*h));
    if (pos + len > s.size()) break;
    idx.frames.push_back({pos, len, *h});
    pos += len;
  }
  idx.trailing_skip = s.size() - pos;

  if (is_metadata_frame(s, idx.frames.front())) idx.metadata_frame = 0;
  return idx;
}

Bytes emit(ByteView s, const FrameIndex& idx) {
  Bytes out;
  out.reserve(s.size());
  out.insert(out.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(idx.leading_skip));
  for (const auto& f : idx.frames) {
    const auto b = s.begin() + static_cast<std::ptrdiff_t>(f.offset);
    out.insert(out.end(), b, b + static_cast<std::ptrdiff_t>(f.length));
  }
  out.insert(out.end(), s.end() - static_cast<std::ptrdiff_t>(idx.trailing_skip), s.end());
  return out;
}

void CorruptionConfig::validate() const {
  if (!(p_glitch >= 0.0 && p_glitch < 1.0)) throw UsageError("mp3", "p_glitch must lie in [0, 1)");
  if (!(overwrite_mean > 0.0)) throw UsageError("mp3", "overwrite_mean must be positive");
  if (!(overwrite_std >= 0.0)) throw UsageError("mp3", "overwrite_std must be non-negative");
}

std::size_t clamp_overwrite_length(double draw, std::size_t frame_length) {
  const double rounded = std::round(draw);
  if (rounded < 1.0) return 1;
  if (rounded >= static_cast<double>(frame_length)) return frame_length;
  return static_cast<std::size_t>(rounded);
}

void apply_record(std::span<std::uint8_t> bytes, const FrameIndex& idx, const CorruptionRecord& rec) {
  const auto& f = idx.frames.at(rec.frame_ordinal);
  if (rec.start_byte_in_frame + rec.length_bytes > f.length) {
    throw DataError("mp3", "corruption record exceeds frame bounds");
  }
  Rng rng(rec.byte_seed);
  for (std::size_t i = 0; i < rec.length_bytes; ++i) {
    bytes[f.offset + rec.start_byte_in_frame + i] = rng.byte();
  }
}

CorruptionResult corrupt_stream(ByteView stream, const FrameIndex& idx, const CorruptionConfig& cfg) {
  cfg.validate();
  CorruptionResult out;
  out.bytes.assign(stream.begin(), stream.end());
  Rng rng(cfg.rng_seed);
  for (std::size_t i = 0; i < idx.frames.size(); ++i) {
    if (idx.metadata_frame == i) continue;
    const double u = rng.uniform();
    if (!(u < cfg.p_glitch)) continue;
    const std::size_t frame_len = idx.frames[i].length;
    CorruptionRecord rec;
    rec.frame_ordinal = i;
    rec.selection_draw = u;
    rec.length_draw = rng.normal(cfg.overwrite_mean, cfg.overwrite_std);
    rec.length_bytes = clamp_overwrite_length(rec.length_draw, frame_len);
    rec.start_byte_in_frame = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(frame_len - rec.length_bytes)));
    rec.byte_seed = rng.next_u64();
    apply_record(out.bytes, idx, rec);
    out.records.push_back(rec);
  }
  return out;
}

ValidatedCorruption validated_corrupt(ByteView stream, const CorruptionConfig& cfg, const Decoder& decoder) {
  ValidatedCorruption out;
  auto clean = decoder.decode(stream);
  if (!clean) throw DataError("mp3", "clean stream fails to decode");
  out.clean = std::move(*clean);
  out.degraded = out.clean;
  out.index = walk_frames(stream);

  auto planned = corrupt_stream(stream, out.index, cfg);
  out.bytes.assign(stream.begin(), stream.end());
  const std::size_t clean_frames = out.clean.frame_count();

  for (auto rec : planned.records) {
    const auto& f = out.index.frames[rec.frame_ordinal];
    const auto first = out.bytes.begin() + static_cast<std::ptrdiff_t>(f.offset);
    const Bytes saved(first, first + static_cast<std::ptrdiff_t>(f.length));
    apply_record(out.bytes, out.index, rec);
    auto decoded = decoder.decode(out.bytes);
    if (decoded && decoded->frame_count() == clean_frames && decoded->channel_count == out.clean.channel_count) {
      rec.survived = true;
      out.degraded = std::move(*decoded);
    } else {
      rec.survived = false;
      std::copy(saved.begin(), saved.end(), first);
    }
    out.records.push_back(rec);
  }
  return out;
}

Bytes synthesize_cbr_stream(std::size_t frame_count, int bitrate_kbps, int sample_rate_hz, std::uint64_t seed) {
  FrameHeader h;
  h.version = MpegVersion::Mpeg1;
  h.layer = Layer::III;
  h.bitrate_kbps = bitrate_kbps;
  h.sample_rate_hz = sample_rate_hz;
  h.channel_mode = ChannelMode::Mono;
  Rng rng(seed);
  Bytes out;
  // Padding slots distributed like an encoder does: keep the running byte
  // count at the exact average frame size.
  const long numerator = 144L * bitrate_kbps * 1000;
  long remainder = 0;
  for (std::size_t i = 0; i < frame_count; ++i) {
    remainder += numerator % sample_rate_hz;
    h.padding = remainder >= sample_rate_hz;
    if (h.padding) remainder -= sample_rate_hz;
    const auto header = encode_header(h);
    out.insert(out.end(), header.begin(), header.end());
    const int len = frame_length_bytes(h);
    for (int b = 4; b < len; ++b) out.push_back(rng.byte());
  }
  return out;
}

nlohmann::json to_json(const CorruptionRecord& r) {
  return {{"frame_ordinal", r.frame_ordinal},   {"start_byte_in_frame", r.start_byte_in_frame},
          {"length_bytes", r.length_bytes},     {"selection_draw", r.selection_draw},
          {"length_draw", r.length_draw},       {"byte_seed", r.byte_seed},
          {"survived", r.survived}};
}

nlohmann::json to_json(const CorruptionConfig& c) {
  return {{"p_glitch", c.p_glitch},
          {"overwrite_mean", c.overwrite_mean},
          {"overwrite_std", c.overwrite_std},
          {"rng_seed", c.rng_seed}};
}

CorruptionRecord record_from_json(const nlohmann::json& j) {
  CorruptionRecord r;
  r.frame_ordinal = j.at("frame_ordinal").get<std::size_t>();
  r.start_byte_in_frame = j.at("start_byte_in_frame").get<std::size_t>();
  r.length_bytes = j.at("length_bytes").get<std::size_t>();
  r.selection_draw = j.at("selection_draw").get<double>();
  r.length_draw = j.at("length_draw").get<double>();
  r.byte_seed = j.at("byte_seed").get<std::uint64_t>();
  r.survived = j.at("survived").get<bool>();
  return r;
}

}  // namespace defectkit::mp3
