// SPDX-License-Identifier: Apache-2.0
//
// Toolkit configuration: one JSON document holding every module's settings.
// Values resolve as defaults, then the config file, then command-line
// overrides; each layer is a JSON merge patch and unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "defectkit/adapter.hpp"
#include "defectkit/baseline.hpp"
#include "defectkit/dataset.hpp"
#include "defectkit/mp3.hpp"
#include "defectkit/nn/hooknet.hpp"
#include "defectkit/nn/train.hpp"
#include "defectkit/synth.hpp"

namespace defectkit {

struct AdapterSetting {
  std::string command;  ///< empty selects the built-in ffmpeg template
  std::string probe;    ///< empty: "<program> -version" for built-ins, no probe otherwise
};

struct ToolkitConfig {
  /// Seeds every random stream (clicks, corruption, splits, weights, shuffling).
  std::uint64_t seed = 0;
  int jobs = 1;

  struct Paths {
    std::string corpus;
    std::string dataset;
    std::string checkpoints;
    std::string reports;
  } paths;

  struct Adapters {
    AdapterSetting encoder;
    AdapterSetting decoder;
    AdapterSetting postprocessor;
    std::string postprocessor_dialect = "ffmpeg";  ///< "ffmpeg" or "sox"
  } adapters;

  ClickConfig click;
  mp3::CorruptionConfig corruption;
  GlitchTargetConfig glitch_target;
  nn::ModelConfig model;
  nn::TrainConfig train;
  BaselineConfig baseline;
  SplitRatios ratios;
  std::size_t max_segments = 50;
  /// Post-process click segments with the configured post-processor.
  bool postprocess = false;

  /// Sizes of the synthetic click sets used by `train` when no dataset is given.
  struct Synthetic {
    std::size_t train_segments = 0;
    std::size_t val_segments = 0;
  } synthetic;

  /// Copies `seed` into every component's rng_seed.
  void propagate_seed();
  void validate() const;
};

nlohmann::json to_json(const ToolkitConfig& c);
/// Parses a complete or partial document over the defaults; throws UsageError
/// on unknown keys or invalid values.
ToolkitConfig toolkit_config_from_json(const nlohmann::json& j);

/// defaults <- file <- overrides.
ToolkitConfig resolve_config(const std::optional<std::filesystem::path>& file, const nlohmann::json& overrides);

/// Writes `resolved_config.json` into `dir`; the file is itself a valid config.
void write_config_snapshot(const ToolkitConfig& c, const std::filesystem::path& dir);

inline constexpr const char* kConfigSnapshotName = "resolved_config.json";

AdapterConfig encoder_adapter(const ToolkitConfig& c);
AdapterConfig decoder_adapter(const ToolkitConfig& c);
AdapterConfig postprocessor_adapter(const ToolkitConfig& c);
EffectDialect postprocessor_dialect(const ToolkitConfig& c);

}  // namespace defectkit
