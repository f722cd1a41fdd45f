// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "defectkit/mp3.hpp"

using namespace defectkit;
using namespace defectkit::mp3;

namespace {

HeaderParse parse4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
  const std::uint8_t bytes[4] = {a, b, c, d};
  return parse_header(ByteView(bytes, 4));
}

// Stand-in decoder: audio lasts while frame headers stay intact, so any
// corruption that touches a header shortens the output.
class HeaderCountingDecoder final : public Decoder {
 public:
  std::optional<Waveform> decode(ByteView mp3) const override {
    ++calls;
    std::size_t pos = 0, frames = 0;
    while (pos + 4 <= mp3.size()) {
      const auto h = parse_header(mp3.subspan(pos, 4));
      if (!h.ok()) break;
      pos += static_cast<std::size_t>(frame_length_bytes(h.header));
      ++frames;
    }
    if (frames == 0) return std::nullopt;
    Waveform w;
    w.samples.assign(frames * 1152, 0.0f);
    return w;
  }
  mutable int calls = 0;
};

}  // namespace

TEST_CASE("mp3 header: 128 kbps 44.1 kHz MPEG-1 Layer III") {
  const auto p = parse4(0xFF, 0xFB, 0x90, 0x64);
  REQUIRE(p.ok());
  CHECK(p.header.version == MpegVersion::Mpeg1);
  CHECK(p.header.layer == Layer::III);
  CHECK(p.header.bitrate_kbps == 128);
  CHECK(p.header.sample_rate_hz == 44100);
  CHECK_FALSE(p.header.padding);
  CHECK(p.header.protection_absent);
  CHECK(frame_length_bytes(p.header) == 417);
  CHECK(samples_per_frame(p.header) == 1152);

  const auto padded = parse4(0xFF, 0xFB, 0x92, 0x64);
  REQUIRE(padded.ok());
  CHECK(padded.header.padding);
  CHECK(frame_length_bytes(padded.header) == 418);

  const auto fast = parse4(0xFF, 0xFB, 0xE0, 0x64);
  REQUIRE(fast.ok());
  CHECK(fast.header.bitrate_kbps == 320);
  CHECK(frame_length_bytes(fast.header) == 1044);

  const auto enc = encode_header(padded.header);
  CHECK(parse_header(ByteView(enc.data(), 4)).header == padded.header);
}

TEST_CASE("mp3 header: every rejection is distinguishable") {
  CHECK(parse4(0x00, 0x00, 0x00, 0x00).status == HeaderStatus::NoSync);
  CHECK(parse4(0xFF, 0xEB, 0x90, 0x64).status == HeaderStatus::ReservedVersion);
  CHECK(parse4(0xFF, 0xF9, 0x90, 0x64).status == HeaderStatus::ReservedLayer);
  CHECK(parse4(0xFF, 0xFB, 0xF0, 0x64).status == HeaderStatus::ReservedBitrate);
  CHECK(parse4(0xFF, 0xFB, 0x9C, 0x64).status == HeaderStatus::ReservedSampleRate);
  CHECK(parse4(0xFF, 0xFB, 0x00, 0x64).status == HeaderStatus::FreeFormatBitrate);
}

TEST_CASE("mp3 walk: frame count, contiguity and byte-identical re-emission") {
  // 30 s at 44.1 kHz in 1152-sample frames.
  const std::size_t frames = static_cast<std::size_t>(std::ceil(30.0 * 44100 / 1152));
  const auto s = synthesize_cbr_stream(frames, 128, 44100, 1);
  const auto idx = walk_frames(s);
  CHECK(idx.frames.size() == frames);
  CHECK(idx.leading_skip == 0);
  CHECK(idx.trailing_skip == 0);
  for (std::size_t i = 0; i + 1 < idx.frames.size(); ++i) {
    CHECK(idx.frames[i + 1].offset == idx.frames[i].offset + idx.frames[i].length);
    CHECK((idx.frames[i].length == 417 || idx.frames[i].length == 418));
  }
  CHECK(emit(s, idx) == s);
}

TEST_CASE("mp3 walk: ID3v2 tag and trailing junk are skipped and preserved") {
  const auto body = synthesize_cbr_stream(50, 128, 44100, 2);
  Bytes s = {'I', 'D', '3', 3, 0, 0, 0, 0, 0, 32};
  s.resize(10 + 32, 0xAB);
  s.insert(s.end(), body.begin(), body.end());
  for (int i = 0; i < 7; ++i) s.push_back(0x11);
  const auto idx = walk_frames(s);
  CHECK(idx.leading_skip == 42);
  CHECK(idx.trailing_skip == 7);
  CHECK(idx.frames.size() == 50);
  const auto plain = walk_frames(body);
  for (std::size_t i = 0; i < 50; ++i) CHECK(idx.frames[i].offset == plain.frames[i].offset + 42);
  CHECK(emit(s, idx) == s);

  const Bytes junk(1000, 0x42);
  CHECK_THROWS_AS(walk_frames(junk), DataError);
}

TEST_CASE("mp3 corrupt: no selection leaves the stream untouched") {
  const auto s = synthesize_cbr_stream(200, 128, 44100, 3);
  const auto idx = walk_frames(s);
  CorruptionConfig cfg;
  cfg.p_glitch = 0.0;
  const auto r = corrupt_stream(s, idx, cfg);
  CHECK(r.bytes == s);
  CHECK(r.records.empty());
}

TEST_CASE("mp3 corrupt: selection rate, bounds and length statistics") {
  const auto s = synthesize_cbr_stream(100000, 128, 44100, 4);
  const auto idx = walk_frames(s);
  CorruptionConfig cfg;
  cfg.rng_seed = 99;
  const auto r = corrupt_stream(s, idx, cfg);
  for (const auto& rec : r.records) {
    REQUIRE(rec.length_bytes >= 1);
    REQUIRE(rec.start_byte_in_frame + rec.length_bytes <= idx.frames[rec.frame_ordinal].length);
  }
  // A denser selection for the length-draw statistics.
  cfg.p_glitch = 0.5;
  const auto dense = corrupt_stream(s, idx, cfg);
  cfg.p_glitch = 0.05;
  const auto stream10k = synthesize_cbr_stream(10000, 128, 44100, 5);
  const auto r10k = corrupt_stream(stream10k, walk_frames(stream10k), cfg);
  const double sigma = std::sqrt(10000 * 0.05 * 0.95);
  CHECK(std::fabs(static_cast<double>(r10k.records.size()) - 500.0) <= 3.0 * sigma);

  // Pre-clamp length draws: mean within 3 standard errors of 120.
  double sum = 0.0;
  const std::size_t n = 10000;
  REQUIRE(dense.records.size() >= n);
  for (std::size_t i = 0; i < n; ++i) sum += dense.records[i].length_draw;
  CHECK(std::fabs(sum / n - 120.0) <= 3.0 * 60.0 / 100.0);
}

TEST_CASE("mp3 corrupt: deterministic under a seed and serialisable") {
  const auto s = synthesize_cbr_stream(500, 128, 44100, 6);
  const auto idx = walk_frames(s);
  CorruptionConfig cfg;
  cfg.rng_seed = 5;
  cfg.p_glitch = 0.2;
  const auto a = corrupt_stream(s, idx, cfg), b = corrupt_stream(s, idx, cfg);
  CHECK(a.bytes == b.bytes);
  REQUIRE(a.records.size() == b.records.size());
  for (const auto& rec : a.records) {
    const auto back = record_from_json(to_json(rec));
    CHECK(back.frame_ordinal == rec.frame_ordinal);
    CHECK(back.byte_seed == rec.byte_seed);
    CHECK(back.length_draw == rec.length_draw);
  }
  cfg.rng_seed = 6;
  CHECK(corrupt_stream(s, idx, cfg).bytes != a.bytes);
}

TEST_CASE("mp3 corrupt: a leading Xing frame is never selected") {
  auto s = synthesize_cbr_stream(300, 128, 44100, 7);
  std::memcpy(s.data() + 36, "Xing", 4);
  const auto idx = walk_frames(s);
  REQUIRE(idx.metadata_frame == std::optional<std::size_t>(0));
  CorruptionConfig cfg;
  cfg.p_glitch = 0.99;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    cfg.rng_seed = seed;
    for (const auto& rec : corrupt_stream(s, idx, cfg).records) CHECK(rec.frame_ordinal != 0);
  }
}

TEST_CASE("mp3 validated corruption: reverts length-changing frames and keeps the length invariant") {
  const auto s = synthesize_cbr_stream(120, 128, 44100, 8);
  HeaderCountingDecoder dec;
  CorruptionConfig cfg;
  cfg.p_glitch = 0.3;
  cfg.rng_seed = 3;
  const auto r = validated_corrupt(s, cfg, dec);
  CHECK(r.degraded.frame_count() == r.clean.frame_count());
  REQUIRE_FALSE(r.records.empty());
  std::size_t reverted = 0;
  for (const auto& rec : r.records) {
    const auto& f = r.index.frames[rec.frame_ordinal];
    if (rec.start_byte_in_frame < 4) {
      // Overwrote header bytes: the stand-in decoder loses frames unless the
      // random bytes happened to form a valid header of the same size.
      if (!rec.survived) ++reverted;
    } else {
      CHECK(rec.survived);
    }
    if (!rec.survived) {
      CHECK(std::equal(s.begin() + f.offset, s.begin() + f.offset + f.length, r.bytes.begin() + f.offset));
    }
  }
  CHECK(dec.decode(r.bytes)->frame_count() == r.clean.frame_count());

  // Adversarial: wipe the sync word of frame 10.
  CorruptionRecord rec;
  rec.frame_ordinal = 10;
  rec.start_byte_in_frame = 0;
  rec.length_bytes = 4;
  rec.byte_seed = 1;
  Bytes broken = s;
  apply_record(broken, r.index, rec);
  CHECK(dec.decode(broken)->frame_count() < r.clean.frame_count());

  cfg.p_glitch = 0.0;
  const auto none = validated_corrupt(s, cfg, dec);
  CHECK(none.bytes == s);
  CHECK(none.degraded.samples == none.clean.samples);
}
