// SPDX-License-Identifier: Apache-2.0
//
// Click insertion, segment post-processing and target vectors.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "defectkit/adapter.hpp"
#include "defectkit/rng.hpp"
#include "defectkit/wave.hpp"

namespace defectkit {

/// One value per 128-sample output frame; each value is 0 or 1.
using TargetVector = std::array<float, kTargetLength>;

struct ClickConfig {
  double p_click = 0.1;
  double min_offset = 0.3;
  double max_offset = 1.0;  ///< exclusive
  int min_len = 1;
  int max_len = 3;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct ClickEvent {
  std::size_t position = 0;
  int length = 1;
  double offset = 0.0;
  int sign = 1;  ///< after clipping correction

  bool operator==(const ClickEvent&) const = default;
};

struct ClickInsertion {
  Segment segment;
  std::optional<ClickEvent> event;
};

/// Adds a click with probability p_click. The same signed offset is added to
/// every affected sample; the sign is inverted event-wide when the drawn sign
/// would push any affected sample past full scale. When both signs clip the
/// segment is returned untouched.
ClickInsertion insert_click(const Segment& s, const ClickConfig& cfg, Rng& rng);

/// Adds a fully specified click (sign before clipping correction).
ClickInsertion apply_click(const Segment& s, std::size_t position, int length, double offset, int sign);

TargetVector click_target(const std::optional<ClickEvent>& e);

struct GlitchTargetConfig {
  double threshold_tau = 1.0;
  double epsilon_floor = 1e-6;

  void validate() const;
};

/// Per-frame log-spectral RMS distance between degraded and clean audio.
std::vector<double> log_spectral_distance(const Segment& clean, const Segment& degraded,
                                          double epsilon_floor);

/// Flags frames whose log-spectral distance exceeds threshold_tau.
TargetVector glitch_target(const Segment& clean, const Segment& degraded, const GlitchTargetConfig& cfg);

struct EqBand {
  double centre_hz = 1000.0;
  double gain_db = 0.0;
};

struct PostProcessSpec {
  bool reverb_enabled = false;
  double reverb_amount = 0.0;  ///< percent, [0, 25]
  bool eq_enabled = false;
  EqBand eq_band1;
  EqBand eq_band2;
  bool compand_enabled = false;
  double compand_ratio = 1.0;  ///< [1, 2]
  std::uint64_t rng_seed = 0;

  bool any_enabled() const { return reverb_enabled || eq_enabled || compand_enabled; }
  void validate() const;
};

/// Random mild effect combination: each effect enabled with probability 1/2,
/// EQ centres log-uniform on [200, 8000] Hz, gains on [-3, 3] dB, reverb on
/// [0, 25] %, compander ratio on [1, 2].
PostProcessSpec draw_postprocess_spec(Rng& rng);

enum class EffectDialect { Ffmpeg, Sox };

/// Effect arguments for the {effects} placeholder of a post-processor template.
std::vector<std::string> render_effects(const PostProcessSpec& spec, EffectDialect dialect);

class PostProcessor {
 public:
  virtual ~PostProcessor() = default;
  virtual Segment process(const Segment& s, const PostProcessSpec& spec) const = 0;
};

/// Runs an external sound processor on a segment WAV. Output is mixed to
/// mono, trimmed or zero-padded to the segment length and scaled down when
/// its peak exceeds full scale.
class CommandPostProcessor final : public PostProcessor {
 public:
  CommandPostProcessor(AdapterConfig cfg, EffectDialect dialect)
      : cfg_(std::move(cfg)), dialect_(dialect) {}
  Segment process(const Segment& s, const PostProcessSpec& spec) const override;

 private:
  AdapterConfig cfg_;
  EffectDialect dialect_;
};

Segment postprocess(const Segment& s, const PostProcessSpec& spec, const PostProcessor& tool);

nlohmann::json to_json(const ClickEvent& e);
nlohmann::json to_json(const ClickConfig& c);
nlohmann::json to_json(const PostProcessSpec& p);
nlohmann::json to_json(const GlitchTargetConfig& g);
ClickEvent click_event_from_json(const nlohmann::json& j);
PostProcessSpec postprocess_spec_from_json(const nlohmann::json& j);

}  // namespace defectkit
