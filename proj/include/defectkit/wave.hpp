// SPDX-License-Identifier: Apache-2.0
//
// Waveforms, WAV file I/O, segmentation and power spectrograms.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "defectkit/error.hpp"

namespace defectkit {

inline constexpr std::size_t kSegmentLength = 16384;
inline constexpr std::size_t kTargetLength = 128;
inline constexpr std::size_t kSamplesPerTarget = kSegmentLength / kTargetLength;
inline constexpr int kDefaultSampleRate = 44100;

/// Interleaved float audio.
struct Waveform {
  std::vector<float> samples;
  int sample_rate = kDefaultSampleRate;
  int channel_count = 1;

  std::size_t frame_count() const { return channel_count > 0 ? samples.size() / channel_count : 0; }
};

/// Fixed-length analysis unit cut from a mono piece.
class Segment {
 public:
  Segment();
  Segment(std::vector<float> samples, std::string source_id = {}, std::int64_t offset = 0);

  std::span<const float> samples() const { return samples_; }
  std::span<float> samples() { return samples_; }
  const std::string& source_id() const { return source_id_; }
  std::int64_t offset_samples() const { return offset_; }

 private:
  std::vector<float> samples_;
  std::string source_id_;
  std::int64_t offset_ = 0;
};

enum class SampleFormat { Pcm16, Float32 };

class WavError : public DataError {
 public:
  enum class Kind { Unreadable, NotWav, UnsupportedEncoding, Truncated, OutOfRange, WriteFailed };

  WavError(Kind kind, const std::string& message) : DataError("wave", message), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

Waveform read_audio(const std::filesystem::path& path);
void write_audio(const Waveform& w, const std::filesystem::path& path,
                 SampleFormat format = SampleFormat::Float32);

/// Averages channels; mono input is returned unchanged.
Waveform mixdown_mono(const Waveform& w);

/// Consecutive non-overlapping segments from offset 0; the partial tail is dropped.
std::vector<Segment> segment_piece(const Waveform& w, std::size_t max_segments,
                                   const std::string& source_id = {});

/// frame_count x bin_count matrix of |DFT|^2 values, row-major.
struct PowerSpectrogram {
  std::size_t frame_count = 0;
  std::size_t bin_count = 0;
  std::size_t window_size = 0;
  std::size_t hop_size = 0;
  std::vector<double> power;

  double at(std::size_t frame, std::size_t bin) const { return power[frame * bin_count + bin]; }
  std::span<const double> frame(std::size_t f) const {
    return std::span<const double>(power).subspan(f * bin_count, bin_count);
  }
};

/// Periodic Hann window of the given length.
std::vector<double> hann_window(std::size_t n);

/// Short-time power spectrum with one frame per hop. Frame f is centred on
/// the middle of samples [f*hop, (f+1)*hop); the signal is reflection-padded
/// where the window runs past either end.
PowerSpectrogram power_spectrogram(std::span<const float> samples, std::size_t window = 256,
                                   std::size_t hop = 128);

inline PowerSpectrogram power_spectrogram(const Segment& s, std::size_t window = 256,
                                          std::size_t hop = 128) {
  return power_spectrogram(s.samples(), window, hop);
}

}  // namespace defectkit
