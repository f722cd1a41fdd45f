// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "defectkit/rng.hpp"
#include "defectkit/wave.hpp"
#include "helpers.hpp"

using namespace defectkit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void put_le(std::ofstream& o, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) o.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

// Minimal RIFF writer for encodings the toolkit does not emit itself.
void write_raw_wav(const fs::path& p, std::uint16_t format, std::uint16_t bits, const std::vector<char>& data,
                   std::uint32_t declared_data_size) {
  std::ofstream o(p, std::ios::binary);
  o.write("RIFF", 4);
  put_le(o, 36 + declared_data_size, 4);
  o.write("WAVEfmt ", 8);
  put_le(o, 16, 4);
  put_le(o, format, 2);
  put_le(o, 1, 2);
  put_le(o, 44100, 4);
  put_le(o, 44100 * bits / 8, 4);
  put_le(o, bits / 8, 2);
  put_le(o, bits, 2);
  o.write("data", 4);
  put_le(o, declared_data_size, 4);
  o.write(data.data(), static_cast<std::streamsize>(data.size()));
}

WavError::Kind read_error_kind(const fs::path& p) {
  try {
    read_audio(p);
  } catch (const WavError& e) {
    return e.kind();
  }
  FAIL("expected WavError");
  return WavError::Kind::Unreadable;
}

// Direct DFT power of a Hann-windowed slice.
std::vector<double> dft_power(const std::vector<double>& x) {
  const std::size_t n = x.size();
  const auto w = hann_window(n);
  std::vector<double> p(n / 2 + 1);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += w[i] * x[i] * std::polar(1.0, -2.0 * std::numbers::pi * k * i / n);
    p[k] = std::norm(acc);
  }
  return p;
}

}  // namespace

TEST_CASE("wav: one second of 16-bit silence round-trips") {
  TempDir dir("defectkit_wave_silence");
  Waveform w;
  w.samples.assign(44100, 0.0f);
  write_audio(w, dir.path / "z.wav", SampleFormat::Pcm16);
  const auto r = read_audio(dir.path / "z.wav");
  CHECK(r.sample_rate == 44100);
  CHECK(r.channel_count == 1);
  CHECK(r.samples == w.samples);
}

TEST_CASE("wav: 16-bit endpoints and clipping-free full scale") {
  TempDir dir("defectkit_wave_scale");
  std::vector<char> data = {0x00, static_cast<char>(0x80), static_cast<char>(0xff), 0x7f};  // -32768, 32767
  write_raw_wav(dir.path / "e.wav", 1, 16, data, 4);
  const auto r = read_audio(dir.path / "e.wav");
  REQUIRE(r.samples.size() == 2);
  CHECK(r.samples[0] == -1.0f);
  CHECK(r.samples[1] == doctest::Approx(32767.0 / 32768.0));

  Waveform w;
  w.samples = {1.0f, -1.0f};
  write_audio(w, dir.path / "full.wav", SampleFormat::Pcm16);
  const auto back = read_audio(dir.path / "full.wav");
  CHECK(back.samples[0] > 0.99f);
  CHECK(back.samples[1] == -1.0f);
}

TEST_CASE("wav: random round trips stay within one 16-bit step; float is exact") {
  TempDir dir("defectkit_wave_noise");
  Waveform w;
  w.channel_count = 2;
  w.sample_rate = 22050;
  Rng rng(3);
  w.samples.resize(20000);
  for (auto& s : w.samples) s = static_cast<float>(rng.uniform(-1.0, 1.0));
  write_audio(w, dir.path / "n16.wav", SampleFormat::Pcm16);
  write_audio(w, dir.path / "nf.wav", SampleFormat::Float32);
  const auto a = read_audio(dir.path / "n16.wav");
  const auto b = read_audio(dir.path / "nf.wav");
  CHECK(a.channel_count == 2);
  CHECK(a.sample_rate == 22050);
  double worst = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) worst = std::max(worst, std::fabs(double(a.samples[i]) - w.samples[i]));
  CHECK(worst <= std::ldexp(1.0, -15));
  CHECK(b.samples == w.samples);
}

TEST_CASE("wav: failures are reported by kind") {
  TempDir dir("defectkit_wave_errors");
  CHECK(read_error_kind(dir.path / "missing.wav") == WavError::Kind::Unreadable);
  {
    std::ofstream o(dir.path / "text.wav");
    o << "this is not audio at all, just some text padding it out";
  }
  CHECK(read_error_kind(dir.path / "text.wav") == WavError::Kind::NotWav);
  write_raw_wav(dir.path / "pcm24.wav", 1, 24, std::vector<char>(6, 0), 6);
  CHECK(read_error_kind(dir.path / "pcm24.wav") == WavError::Kind::UnsupportedEncoding);
  write_raw_wav(dir.path / "short.wav", 1, 16, std::vector<char>(10, 0), 400);
  CHECK(read_error_kind(dir.path / "short.wav") == WavError::Kind::Truncated);

  Waveform bad;
  bad.samples = {0.5f, 1.5f};
  try {
    write_audio(bad, dir.path / "bad.wav");
    FAIL("expected WavError");
  } catch (const WavError& e) {
    CHECK(e.kind() == WavError::Kind::OutOfRange);
  }
}

TEST_CASE("mixdown: arithmetic mean of channels") {
  Waveform mono;
  mono.samples = {0.1f, -0.2f};
  CHECK(mixdown_mono(mono).samples == mono.samples);
  Waveform st;
  st.channel_count = 2;
  st.samples = {0.5f, -0.5f, 0.2f, 0.6f};
  const auto m = mixdown_mono(st);
  CHECK(m.channel_count == 1);
  REQUIRE(m.samples.size() == 2);
  CHECK(m.samples[0] == 0.0f);
  CHECK(m.samples[1] == doctest::Approx(0.4));
}

TEST_CASE("segmentation: consecutive non-overlapping partition") {
  Waveform w;
  w.samples.resize(819200);
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = static_cast<float>(i % 1000) / 1000.0f;
  const auto segs = segment_piece(w, 50, "p");
  REQUIRE(segs.size() == 50);
  for (std::size_t i = 0; i < segs.size(); ++i) {
    CHECK(segs[i].offset_samples() == static_cast<std::int64_t>(i * kSegmentLength));
    CHECK(segs[i].source_id() == "p");
    CHECK(std::equal(segs[i].samples().begin(), segs[i].samples().end(), w.samples.begin() + i * kSegmentLength));
  }
  w.samples.resize(16383);
  CHECK(segment_piece(w, 50).empty());
  w.samples.resize(32769);
  CHECK(segment_piece(w, 50).size() == 2);
  CHECK(segment_piece(w, 1).size() == 1);
}

TEST_CASE("spectrogram: shape, silence and determinism") {
  const Segment zero;
  const auto s = power_spectrogram(zero);
  CHECK(s.frame_count == 128);
  CHECK(s.bin_count == 129);
  for (double v : s.power) CHECK(v == 0.0);
  const auto noise = Segment(testutil::white_noise(kSegmentLength, 0.1, 4));
  const auto a = power_spectrogram(noise), b = power_spectrogram(noise);
  CHECK(a.power == b.power);
  for (double v : a.power) CHECK(v >= 0.0);
}

TEST_CASE("spectrogram: bin-centred sine concentrates in its bin") {
  const std::size_t k = 20;
  const auto seg = Segment(testutil::sine(kSegmentLength, k * 44100.0 / 256.0, 0.5));
  const auto s = power_spectrogram(seg);
  for (std::size_t f = 0; f < s.frame_count; ++f) {
    const auto row = s.frame(f);
    const double peak = row[k];
    // Edge frames see the reflected signal, whose phase jump spreads energy;
    // only the peak location is checked there.
    const bool edge = f == 0 || f + 1 == s.frame_count;
    for (std::size_t b = 0; b < s.bin_count; ++b) {
      CHECK(row[b] <= peak);
      // A Hann window spreads a bin-centred tone over bins k-1..k+1 only.
      if (!edge && (b + 1 < k || b > k + 1)) CHECK_MESSAGE(row[b] < 0.01 * peak, "frame ", f, " bin ", b);
    }
  }
}

TEST_CASE("spectrogram: frames agree with a direct DFT and with Parseval") {
  const auto x = testutil::white_noise(kSegmentLength, 0.2, 8);
  const auto s = power_spectrogram(std::span<const float>(x));
  const std::size_t f = 40;  // interior frame covers [f*128 - 64, f*128 + 192)
  std::vector<double> slice(256);
  for (std::size_t i = 0; i < 256; ++i) slice[i] = x[f * 128 - 64 + i];
  const auto direct = dft_power(slice);
  for (std::size_t b = 0; b < 129; ++b) CHECK(s.at(f, b) == doctest::Approx(direct[b]).epsilon(1e-9));

  const auto w = hann_window(256);
  double energy = 0.0;
  for (std::size_t i = 0; i < 256; ++i) energy += (w[i] * slice[i]) * (w[i] * slice[i]);
  double spectral = s.at(f, 0) + s.at(f, 128);
  for (std::size_t b = 1; b < 128; ++b) spectral += 2.0 * s.at(f, b);
  CHECK(spectral / 256.0 == doctest::Approx(energy).epsilon(1e-6));
}

TEST_CASE("spectrogram: frame f ignores samples outside [128f - 128, 128f + 256)") {
  auto x = testutil::white_noise(kSegmentLength, 0.2, 9);
  const auto base = power_spectrogram(std::span<const float>(x));
  Rng rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const auto f = static_cast<std::size_t>(rng.uniform_int(2, 125));
    auto y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (i + 128 < 128 * f || i >= 128 * f + 256) y[i] += 0.3f;
    }
    const auto pert = power_spectrogram(std::span<const float>(y));
    const auto a = base.frame(f), b = pert.frame(f);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
}
