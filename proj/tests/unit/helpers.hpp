// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <numbers>
#include <vector>

#include "defectkit/rng.hpp"
#include "defectkit/wave.hpp"

namespace testutil {

inline std::vector<float> sine(std::size_t n, double freq_hz, double amplitude, double phase = 0.0,
                               int rate = defectkit::kDefaultSampleRate) {
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * i / rate + phase));
  }
  return x;
}

inline std::vector<float> white_noise(std::size_t n, double sd, std::uint64_t seed) {
  defectkit::Rng rng(seed);
  std::vector<float> x(n);
  for (auto& v : x) v = static_cast<float>(rng.normal(0.0, sd));
  return x;
}

// -12 dBFS 440 Hz carrier.
inline defectkit::Segment sine_segment(double amplitude = std::pow(10.0, -12.0 / 20.0)) {
  return defectkit::Segment(sine(defectkit::kSegmentLength, 440.0, amplitude));
}

// Directory of 16-bit mono WAV pieces: a sine carrier with random pitch and
// level plus light noise, `seconds` long each.
inline std::vector<std::filesystem::path> write_toy_corpus(const std::filesystem::path& dir, std::size_t pieces,
                                                           double seconds, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  defectkit::Rng rng(seed);
  std::vector<std::filesystem::path> files;
  for (std::size_t p = 0; p < pieces; ++p) {
    const auto n = static_cast<std::size_t>(seconds * defectkit::kDefaultSampleRate);
    const double freq = rng.uniform(110.0, 1760.0), amp = rng.uniform(0.1, 0.5);
    auto x = sine(n, freq, amp, rng.uniform(0.0, 6.28));
    const auto noise = white_noise(n, 0.01, rng.next_u64());
    for (std::size_t i = 0; i < n; ++i) x[i] += noise[i];
    defectkit::Waveform w;
    w.samples = std::move(x);
    char name[32];
    std::snprintf(name, sizeof name, "piece%02zu.wav", p);
    files.push_back(dir / name);
    defectkit::write_audio(w, files.back(), defectkit::SampleFormat::Pcm16);
  }
  return files;
}

// Kolmogorov-Smirnov statistic of a sample against the uniform law on [lo, hi).
inline double ks_uniform_statistic(std::vector<double> x, double lo, double hi) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double cdf = std::clamp((x[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, (i + 1) / n - cdf, cdf - i / n});
  }
  return d;
}

// Asymptotic KS critical value at significance 0.01.
inline double ks_critical_001(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

}  // namespace testutil
