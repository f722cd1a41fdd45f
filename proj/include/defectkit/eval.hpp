// SPDX-License-Identifier: Apache-2.0
//
// Per-target-value metrics, reports and report comparison.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectkit/synth.hpp"

namespace defectkit {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  void add(const TargetVector& pred, const TargetVector& target);
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  ConfusionCounts counts;
  /// False when there are neither actual nor predicted positives.
  bool positive_class_defined = false;
  /// False when tp + fp == 0; precision is then reported as 0.
  bool precision_defined = false;
  /// False when tp + fn == 0; recall is then reported as 0.
  bool recall_defined = false;
};

Metrics metrics_from_counts(const ConfusionCounts& c);

/// Values above 0.5 count as positive.
Metrics compute_metrics(std::span<const TargetVector> pred, std::span<const TargetVector> target);

struct ThresholdRow {
  double threshold = 0.0;
  Metrics validation;
  Metrics test;
};

struct Report {
  std::string detector_id;
  std::string dataset_id;
  std::string split;
  std::string config_digest;
  Metrics metrics;
  std::vector<ThresholdRow> sweep;
  std::optional<double> selected_threshold;
  std::optional<std::string> timestamp;
  std::string toolkit_version;
};

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// SHA-256 over the compact JSON dump (keys sorted) of a configuration.
std::string config_digest(const nlohmann::json& config);

/// Timestamp for reports: $SOURCE_DATE_EPOCH when set, else none, so that
/// reruns stay byte-identical.
std::optional<std::string> report_timestamp();

nlohmann::json to_json(const Metrics& m);
Metrics metrics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Report& r);
Report report_from_json(const nlohmann::json& j);

void write_report(const Report& r, const std::filesystem::path& json_path);
/// Writes the CSV next to the JSON file (same stem, .csv).
void write_report_csv(const Report& r, const std::filesystem::path& csv_path);
Report read_report(const std::filesystem::path& json_path);

class Dataset;

using SegmentDetector = std::function<TargetVector(const Segment&)>;

struct SegmentPrediction {
  std::string segment_id;
  TargetVector prediction{};
  TargetVector target{};
};

struct Evaluation {
  Report report;
  std::vector<SegmentPrediction> predictions;
};

/// Runs `detector` over one split and computes metrics against the manifest targets.
Evaluation evaluate_detector(const SegmentDetector& detector, const Dataset& dataset, const std::string& split,
                             const std::string& detector_id, const nlohmann::json& detector_config);

void write_predictions(const std::vector<SegmentPrediction>& preds, const std::filesystem::path& path);
std::vector<SegmentPrediction> read_predictions(const std::filesystem::path& path);

struct ComparisonRow {
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;  ///< b - a
};

struct Comparison {
  std::string dataset_id;
  std::string detector_a;
  std::string detector_b;
  std::vector<ComparisonRow> rows;

  std::string to_csv() const;
  std::string to_text() const;
};

/// Side-by-side table; throws DataError when the reports cover different datasets.
Comparison compare_reports(const Report& a, const Report& b);

inline constexpr const char* kToolkitVersion = "0.1.0";

}  // namespace defectkit
