// SPDX-License-Identifier: Apache-2.0
//
// Classical click detector: linear-prediction residual, matched filter and a
// robust power floor, run over overlapping sub-windows of a segment.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "defectkit/eval.hpp"
#include "defectkit/synth.hpp"
#include "defectkit/wave.hpp"

namespace defectkit {

class Dataset;

struct BaselineConfig {
  int lpc_order = 12;
  double detection_threshold_db = 30.0;
  std::size_t frame_size = 4096;
  std::size_t hop_size = 2048;
  double power_estimation_threshold_db = 10.0;
  double silence_threshold_db = -50.0;
  double regularization = 1e-9;  ///< relative diagonal loading of the autocorrelation

  void validate() const;
};

nlohmann::json to_json(const BaselineConfig& c);
BaselineConfig baseline_config_from_json(const nlohmann::json& j);

inline constexpr double kDefaultSweepThresholds[] = {30.0, 33.0, 35.0, 40.0, 50.0};

struct LpcResult {
  /// Prediction-error filter 1 + a1 z^-1 + ... + ap z^-p; coefficients[0] == 1.
  std::vector<double> coefficients;
  std::vector<double> reflection;
  /// Prediction-error power after each order 0..p.
  std::vector<double> error_power;
  bool degenerate = false;
};

/// Biased autocorrelation r[0..max_lag].
std::vector<double> autocorrelation(std::span<const float> x, int max_lag);

/// Levinson-Durbin recursion on r[0..order]. Stops early and flags the result
/// degenerate when the error power vanishes or a reflection reaches unit magnitude.
LpcResult levinson_durbin(std::span<const double> r, int order);

/// Autocorrelation-method LPC with r[0] scaled by (1 + regularization).
LpcResult lpc_coefficients(std::span<const float> frame, int order, double regularization = 1e-9);

/// Prediction residual: forward for n >= order, backward for the first samples.
std::vector<double> lpc_residual(std::span<const float> x, std::span<const double> a);

/// A local maximum of matched-filter power and its level above the frame floor.
struct ClickCandidate {
  std::size_t position = 0;
  double level_db = 0.0;
};

/// Every local maximum of matched-filter power; thresholding happens afterwards,
/// so the detections at a higher threshold are a subset of those at a lower one.
std::vector<ClickCandidate> frame_candidates(std::span<const float> frame, const BaselineConfig& cfg);

std::vector<std::size_t> detect_clicks_frame(std::span<const float> frame, const BaselineConfig& cfg);

struct Detection {
  std::vector<std::size_t> positions;  ///< ascending segment sample indices
  TargetVector target{};
};

/// Candidates of all sub-windows in segment coordinates, sorted by position.
std::vector<ClickCandidate> segment_candidates(const Segment& s, const BaselineConfig& cfg);

/// Keeps candidates above the threshold and collapses those within lpc_order
/// samples of an earlier kept position.
Detection detections_at(std::span<const ClickCandidate> candidates, double threshold_db, int lpc_order);

Detection detect_clicks_segment(const Segment& s, const BaselineConfig& cfg);

struct SweepResult {
  std::vector<ThresholdRow> rows;
  std::vector<std::size_t> validation_detections;  ///< detection count per threshold
  std::vector<std::size_t> test_detections;
  double selected_threshold = 0.0;  ///< highest validation accuracy; first wins ties
};

SweepResult threshold_sweep(const Dataset& dataset, std::span<const double> thresholds, const BaselineConfig& cfg,
                            int jobs = 1);

}  // namespace defectkit
