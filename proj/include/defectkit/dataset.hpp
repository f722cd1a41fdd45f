// SPDX-License-Identifier: Apache-2.0
//
// On-disk datasets: one directory per split holding 32-bit float segment WAVs
// and a JSON-lines manifest, plus a top-level dataset.json.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectkit/adapter.hpp"
#include "defectkit/mp3.hpp"
#include "defectkit/synth.hpp"

namespace defectkit {

inline constexpr const char* kSplits[] = {"train", "val", "test"};

struct DatasetRecord {
  std::string segment_id;
  std::string source_id;
  std::int64_t offset = 0;
  std::string split;
  std::string file;                       ///< relative to the split directory
  std::optional<std::string> clean_file;  ///< glitch datasets keep the clean decoding
  TargetVector target{};
  nlohmann::json provenance;
  std::optional<PostProcessSpec> postprocess;
};

nlohmann::json to_json(const DatasetRecord& r);
DatasetRecord dataset_record_from_json(const nlohmann::json& j);

class Dataset {
 public:
  static Dataset open(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  const std::string& id() const { return id_; }
  const nlohmann::json& info() const { return info_; }
  bool has_split(const std::string& split) const { return records_.count(split) != 0; }
  /// Throws DataError when the split is missing.
  const std::vector<DatasetRecord>& records(const std::string& split) const;
  Segment load_segment(const DatasetRecord& r) const;
  Segment load_clean_segment(const DatasetRecord& r) const;

 private:
  std::filesystem::path root_;
  std::string id_;
  nlohmann::json info_;
  std::map<std::string, std::vector<DatasetRecord>> records_;
};

struct SplitRatios {
  double train = 0.69;
  double val = 0.155;
  double test = 0.155;
};

/// Deterministic piece-to-split assignment. With three or more pieces every
/// split with a non-zero ratio receives at least one piece.
std::vector<std::string> assign_splits(const std::vector<std::string>& piece_ids, const SplitRatios& ratios,
                                       std::uint64_t seed);

/// Sorted list of .wav files in a corpus directory; DataError when empty.
std::vector<std::filesystem::path> list_corpus(const std::filesystem::path& corpus);

struct ClickDatasetOptions {
  ClickConfig click;
  bool postprocess = false;
  SplitRatios ratios;
  std::size_t max_segments = 50;
  int jobs = 1;
};

struct ClickedSegment {
  Segment segment;
  std::optional<ClickEvent> event;
  std::optional<PostProcessSpec> postprocess;
};

/// The single click-synthesis route shared by cached datasets and on-the-fly
/// training sources: all randomness comes from (piece_seed, segment index).
ClickedSegment synthesize_click_segment(const Segment& clean, const ClickConfig& cfg, std::uint64_t piece_seed,
                                        std::size_t segment_index, const PostProcessor* post);

std::uint64_t piece_seed(std::uint64_t global_seed, const std::string& piece_id);

struct DatasetManifest {
  std::filesystem::path root;
  std::string dataset_id;
  std::map<std::string, std::size_t> split_counts;
  std::size_t segment_count = 0;
  std::uint64_t positive_values = 0;
  double positive_fraction = 0.0;
};

DatasetManifest build_click_dataset(const std::filesystem::path& corpus, const ClickDatasetOptions& opts,
                                    const PostProcessor* post, const std::filesystem::path& out);

struct GlitchDatasetOptions {
  mp3::CorruptionConfig corruption;
  GlitchTargetConfig target;
  SplitRatios ratios;
  std::size_t max_segments = 50;
  int jobs = 1;
};

DatasetManifest build_glitch_dataset(const std::filesystem::path& corpus, const GlitchDatasetOptions& opts,
                                     const CommandEncoder& encoder, const mp3::Decoder& decoder,
                                     const std::filesystem::path& out);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace defectkit
