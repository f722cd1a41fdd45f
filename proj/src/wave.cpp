// SPDX-License-Identifier: Apache-2.0

#include "defectkit/wave.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <numbers>

namespace defectkit {

Segment::Segment() : samples_(kSegmentLength, 0.0f) {}

Segment::Segment(std::vector<float> samples, std::string source_id, std::int64_t offset)
    : samples_(std::move(samples)), source_id_(std::move(source_id)), offset_(offset) {
  if (samples_.size() != kSegmentLength) {
    throw DataError("wave", "segment must hold exactly " + std::to_string(kSegmentLength) +
                                " samples, got " + std::to_string(samples_.size()));
  }
}

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(v & 0xFF);
  out.push_back(v >> 8);
}

void put32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace

Waveform read_audio(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError(WavError::Kind::Unreadable, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw WavError(WavError::Kind::Unreadable, "read failed for " + path.string());

  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw WavError(WavError::Kind::NotWav, path.string() + " is not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    const std::uint32_t size = le32(hdr + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) {
        throw WavError(WavError::Kind::Truncated, "fmt chunk truncated in " + path.string());
      }
      format = le16(bytes.data() + body);
      channels = le16(bytes.data() + body + 2);
      rate = le32(bytes.data() + body + 4);
      bits = le16(bytes.data() + body + 14);
      if (format == kFormatExtensible) {
        if (size < 40) {
          throw WavError(WavError::Kind::Truncated, "extensible fmt chunk truncated");
        }
        format = le16(bytes.data() + body + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) throw WavError(WavError::Kind::NotWav, "data chunk before fmt chunk");
      const bool pcm16 = format == kFormatPcm && bits == 16;
      const bool f32 = format == kFormatFloat && bits == 32;
      if (!pcm16 && !f32) {
        throw WavError(WavError::Kind::UnsupportedEncoding,
                       "unsupported encoding (format " + std::to_string(format) + ", " +
                           std::to_string(bits) + " bits) in " + path.string());
      }
      if (channels == 0 || rate == 0) {
        throw WavError(WavError::Kind::UnsupportedEncoding, "zero channels or sample rate");
      }
      std::size_t available = bytes.size() - body;
      // Streaming writers leave 0xFFFFFFFF as a placeholder size.
      std::size_t data_size = size == 0xFFFFFFFFu ? available : size;
      if (data_size > available) {
        throw WavError(WavError::Kind::Truncated,
                       "data chunk declares " + std::to_string(size) + " bytes but only " +
                           std::to_string(available) + " remain in " + path.string());
      }
      const std::size_t block = static_cast<std::size_t>(bits / 8) * channels;
      const std::size_t n = data_size / block * channels;
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.channel_count = channels;
      w.samples.resize(n);
      const unsigned char* d = bytes.data() + body;
      if (pcm16) {
        for (std::size_t i = 0; i < n; ++i) {
          w.samples[i] = static_cast<float>(static_cast<std::int16_t>(le16(d + 2 * i))) / 32768.0f;
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          const std::uint32_t u = le32(d + 4 * i);
          float f;
          std::memcpy(&f, &u, sizeof f);
          w.samples[i] = f;
        }
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw WavError(have_fmt ? WavError::Kind::Truncated : WavError::Kind::NotWav,
                 "no data chunk in " + path.string());
}

void write_audio(const Waveform& w, const std::filesystem::path& path, SampleFormat format) {
  if (w.channel_count <= 0 || w.sample_rate <= 0) {
    throw WavError(WavError::Kind::WriteFailed, "invalid channel count or sample rate");
  }
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const float s = w.samples[i];
    if (!(std::fabs(s) <= 1.0f)) {
      throw WavError(WavError::Kind::OutOfRange,
                     "sample " + std::to_string(i) + " = " + std::to_string(s) +
                         " outside [-1, 1] while writing " + path.string());
    }
  }
  const std::uint16_t bits = format == SampleFormat::Pcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(bits / 8 * w.channel_count);
  const auto data_size = static_cast<std::uint32_t>(w.samples.size() * (bits / 8));

  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put32(out, 16);
  put16(out, format == SampleFormat::Pcm16 ? kFormatPcm : kFormatFloat);
  put16(out, static_cast<std::uint16_t>(w.channel_count));
  put32(out, static_cast<std::uint32_t>(w.sample_rate));
  put32(out, static_cast<std::uint32_t>(w.sample_rate) * block);
  put16(out, block);
  put16(out, bits);
  put_tag(out, "data");
  put32(out, data_size);
  if (format == SampleFormat::Pcm16) {
    for (float s : w.samples) {
      const long q = std::lround(static_cast<double>(s) * 32768.0);
      put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
    }
  } else {
    for (float s : w.samples) {
      std::uint32_t u;
      std::memcpy(&u, &s, sizeof u);
      put32(out, u);
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw WavError(WavError::Kind::WriteFailed, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw WavError(WavError::Kind::WriteFailed, "write failed for " + path.string());
}

Waveform mixdown_mono(const Waveform& w) {
  if (w.channel_count == 1) return w;
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.channel_count = 1;
  const std::size_t frames = w.frame_count();
  out.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double sum = 0.0;
    for (int c = 0; c < w.channel_count; ++c) sum += w.samples[i * w.channel_count + c];
    out.samples[i] = static_cast<float>(sum / w.channel_count);
  }
  return out;
}

std::vector<Segment> segment_piece(const Waveform& w, std::size_t max_segments,
                                   const std::string& source_id) {
  if (w.channel_count != 1) throw DataError("wave", "segment_piece expects mono audio");
  const std::size_t n = std::min(max_segments, w.samples.size() / kSegmentLength);
  std::vector<Segment> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto begin = w.samples.begin() + static_cast<std::ptrdiff_t>(i * kSegmentLength);
    out.emplace_back(std::vector<float>(begin, begin + kSegmentLength), source_id,
                     static_cast<std::int64_t>(i * kSegmentLength));
  }
  return out;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

namespace {

// FFTW planning is not thread-safe; execution with new arrays is.
fftw_plan r2c_plan(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, fftw_plan> plans;
  std::lock_guard lock(mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  std::vector<double> in(n);
  std::vector<fftw_complex> out(n / 2 + 1);
  fftw_plan p = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.data(), out.data(),
                                     FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_PRESERVE_INPUT);
  plans.emplace(n, p);
  return p;
}

std::ptrdiff_t reflect(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

PowerSpectrogram power_spectrogram(std::span<const float> samples, std::size_t window,
                                   std::size_t hop) {
  if (hop == 0 || window < hop) throw UsageError("wave", "spectrogram requires window >= hop > 0");
  PowerSpectrogram spec;
  spec.window_size = window;
  spec.hop_size = hop;
  spec.frame_count = samples.size() / hop;
  spec.bin_count = window / 2 + 1;
  spec.power.assign(spec.frame_count * spec.bin_count, 0.0);
  if (samples.empty()) return spec;

  const auto win = hann_window(window);
  const fftw_plan plan = r2c_plan(window);
  std::vector<double> buf(window);
  std::vector<fftw_complex> out(spec.bin_count);
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
  const std::ptrdiff_t lead = (static_cast<std::ptrdiff_t>(window) - static_cast<std::ptrdiff_t>(hop)) / 2;

  for (std::size_t f = 0; f < spec.frame_count; ++f) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(f * hop) - lead;
    for (std::size_t i = 0; i < window; ++i) {
      buf[i] = win[i] * samples[static_cast<std::size_t>(reflect(start + static_cast<std::ptrdiff_t>(i), n))];
    }
    fftw_execute_dft_r2c(plan, buf.data(), out.data());
    double* row = spec.power.data() + f * spec.bin_count;
    for (std::size_t b = 0; b < spec.bin_count; ++b) {
      row[b] = out[b][0] * out[b][0] + out[b][1] * out[b][1];
    }
  }
  return spec;
}

}  // namespace defectkit
