// SPDX-License-Identifier: Apache-2.0

#include "defectkit/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "defectkit/error.hpp"
#include "defectkit/eval.hpp"
#include "defectkit/rng.hpp"

namespace defectkit {

namespace fs = std::filesystem;

nlohmann::json to_json(const DatasetRecord& r) {
  nlohmann::json j;
  j["segment_id"] = r.segment_id;
  j["source_id"] = r.source_id;
  j["offset"] = r.offset;
  j["split"] = r.split;
  j["file"] = r.file;
  if (r.clean_file) j["clean_file"] = *r.clean_file;
  j["target"] = r.target;
  j["provenance"] = r.provenance;
  j["postprocess"] = r.postprocess ? to_json(*r.postprocess) : nlohmann::json(nullptr);
  return j;
}

DatasetRecord dataset_record_from_json(const nlohmann::json& j) {
  DatasetRecord r;
  r.segment_id = j.at("segment_id").get<std::string>();
  r.source_id = j.at("source_id").get<std::string>();
  r.offset = j.at("offset").get<std::int64_t>();
  r.split = j.at("split").get<std::string>();
  r.file = j.at("file").get<std::string>();
  if (j.contains("clean_file")) r.clean_file = j.at("clean_file").get<std::string>();
  const auto& t = j.at("target");
  if (!t.is_array() || t.size() != kTargetLength) {
    throw DataError("dataset", "record " + r.segment_id + " has a target of the wrong length");
  }
  for (std::size_t i = 0; i < kTargetLength; ++i) r.target[i] = t[i].get<float>();
  r.provenance = j.value("provenance", nlohmann::json(nullptr));
  if (j.contains("postprocess") && !j.at("postprocess").is_null()) {
    r.postprocess = postprocess_spec_from_json(j.at("postprocess"));
  }
  return r;
}

Dataset Dataset::open(const fs::path& root) {
  Dataset d;
  d.root_ = root;
  const auto info_path = root / "dataset.json";
  std::ifstream info(info_path);
  if (!info) throw DataError("dataset", "cannot read " + info_path.string());
  try {
    info >> d.info_;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset", "malformed " + info_path.string() + ": " + e.what());
  }
  d.id_ = d.info_.value("dataset_id", root.filename().string());
  for (const char* split : kSplits) {
    const auto manifest = root / split / "manifest.jsonl";
    std::ifstream in(manifest);
    if (!in) continue;
    auto& recs = d.records_[split];
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        recs.push_back(dataset_record_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw DataError("dataset", manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  return d;
}

const std::vector<DatasetRecord>& Dataset::records(const std::string& split) const {
  const auto it = records_.find(split);
  if (it == records_.end()) throw DataError("dataset", "split '" + split + "' missing in " + root_.string());
  return it->second;
}

namespace {

Segment load_wav_segment(const fs::path& path, const DatasetRecord& r) {
  auto w = read_audio(path);
  if (w.channel_count != 1 || w.samples.size() != kSegmentLength) {
    throw DataError("dataset", "segment file " + path.string() + " does not hold one mono segment");
  }
  return Segment(std::move(w.samples), r.source_id, r.offset);
}

}  // namespace

Segment Dataset::load_segment(const DatasetRecord& r) const {
  return load_wav_segment(root_ / r.split / r.file, r);
}

Segment Dataset::load_clean_segment(const DatasetRecord& r) const {
  if (!r.clean_file) throw DataError("dataset", "record " + r.segment_id + " has no clean segment");
  return load_wav_segment(root_ / r.split / *r.clean_file, r);
}

std::vector<std::string> assign_splits(const std::vector<std::string>& piece_ids, const SplitRatios& ratios,
                                       std::uint64_t seed) {
  const std::size_t n = piece_ids.size();
  const double total = ratios.train + ratios.val + ratios.test;
  if (!(total > 0.0) || ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
    throw UsageError("dataset", "split ratios must be non-negative with a positive sum");
  }
  auto count_for = [&](double r) {
    auto c = static_cast<std::size_t>(std::llround(static_cast<double>(n) * r / total));
    if (n >= 3 && r > 0.0) c = std::max<std::size_t>(c, 1);
    return c;
  };
  std::size_t n_val = count_for(ratios.val);
  std::size_t n_test = count_for(ratios.test);
  while (n_val + n_test > n) (n_test > n_val ? n_test : n_val)--;
  if (ratios.train > 0.0 && n >= 3 && n_val + n_test == n) (n_test >= n_val ? n_test : n_val)--;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  std::vector<std::string> splits(n);
  const std::size_t n_train = n - n_val - n_test;
  for (std::size_t k = 0; k < n; ++k) {
    splits[order[k]] = k < n_train ? "train" : (k < n_train + n_val ? "val" : "test");
  }
  return splits;
}

std::vector<fs::path> list_corpus(const fs::path& corpus) {
  if (!fs::is_directory(corpus)) throw DataError("dataset", "corpus " + corpus.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(corpus)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") files.push_back(entry.path());
  }
  if (files.empty()) throw DataError("dataset", "corpus " + corpus.string() + " contains no .wav files");
  std::sort(files.begin(), files.end());
  return files;
}

std::uint64_t piece_seed(std::uint64_t global_seed, const std::string& piece_id) {
  return derive_seed(global_seed, "piece/" + piece_id);
}

ClickedSegment synthesize_click_segment(const Segment& clean, const ClickConfig& cfg, std::uint64_t piece_seed,
                                        std::size_t segment_index, const PostProcessor* post) {
  const std::uint64_t seg_seed = derive_seed(piece_seed, segment_index);
  Rng click_rng(derive_seed(seg_seed, "click"));
  auto ins = insert_click(clean, cfg, click_rng);
  ClickedSegment out{std::move(ins.segment), ins.event, std::nullopt};
  if (post) {
    Rng post_rng(derive_seed(seg_seed, "postprocess"));
    auto spec = draw_postprocess_spec(post_rng);
    out.segment = postprocess(out.segment, spec, *post);
    out.postprocess = spec;
  }
  return out;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace {

struct PieceOutput {
  std::vector<DatasetRecord> records;
};

std::string segment_name(const std::string& piece, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%04zu", index);
  return piece + buf;
}

void prepare_output(const fs::path& corpus, const fs::path& out) {
  std::error_code ec;
  if (fs::exists(out) && fs::equivalent(out, corpus, ec)) {
    throw UsageError("dataset", "output directory must differ from the corpus");
  }
  fs::create_directories(out);
  for (const char* split : kSplits) {
    fs::remove_all(out / split);
    fs::create_directories(out / split);
  }
}

Waveform load_piece(const fs::path& file) {
  auto w = mixdown_mono(read_audio(file));
  if (w.sample_rate != kDefaultSampleRate) {
    throw DataError("dataset", file.string() + " is sampled at " + std::to_string(w.sample_rate) +
                                   " Hz; corpus audio must be 44100 Hz");
  }
  return w;
}

// MP3 decoding overshoots near full scale and corrupted frames can decode to
// anything; clamp the way a 16-bit decode would.
Waveform clamp_full_scale(Waveform w) {
  for (auto& x : w.samples) x = std::clamp(x, -1.0f, 1.0f);
  return w;
}

void write_segment(const Segment& s, const fs::path& path) {
  Waveform w;
  w.samples.assign(s.samples().begin(), s.samples().end());
  write_audio(w, path, SampleFormat::Float32);
}

DatasetManifest finalize(const fs::path& out, const std::string& kind, const nlohmann::json& config,
                         const std::vector<std::string>& piece_ids, const std::vector<std::string>& splits,
                         const std::vector<PieceOutput>& pieces) {
  DatasetManifest m;
  m.root = out;
  nlohmann::json piece_list = nlohmann::json::array();
  for (std::size_t i = 0; i < piece_ids.size(); ++i) {
    piece_list.push_back({{"id", piece_ids[i]}, {"split", splits[i]}, {"segments", pieces[i].records.size()}});
  }
  m.dataset_id = kind + "-" + config_digest({{"config", config}, {"pieces", piece_list}}).substr(0, 16);

  std::map<std::string, std::ofstream> manifests;
  for (const char* split : kSplits) {
    manifests[split].open(out / split / "manifest.jsonl", std::ios::trunc);
    m.split_counts[split] = 0;
  }
  for (const auto& piece : pieces) {
    for (const auto& r : piece.records) {
      manifests[r.split] << to_json(r).dump() << '\n';
      ++m.split_counts[r.split];
      ++m.segment_count;
      for (float v : r.target) m.positive_values += v > 0.5f ? 1 : 0;
    }
  }
  for (auto& [split, f] : manifests) {
    if (!f) throw DataError("dataset", "failed writing manifest for split " + split);
  }
  m.positive_fraction = m.segment_count == 0
                            ? 0.0
                            : static_cast<double>(m.positive_values) /
                                  static_cast<double>(m.segment_count * kTargetLength);

  nlohmann::json info;
  info["dataset_id"] = m.dataset_id;
  info["kind"] = kind;
  info["config"] = config;
  info["pieces"] = piece_list;
  info["split_counts"] = m.split_counts;
  info["segment_count"] = m.segment_count;
  info["positive_values"] = m.positive_values;
  info["positive_fraction"] = m.positive_fraction;
  info["toolkit_version"] = kToolkitVersion;
  std::ofstream f(out / "dataset.json", std::ios::trunc);
  f << info.dump(2) << '\n';
  if (!f) throw DataError("dataset", "cannot write " + (out / "dataset.json").string());
  return m;
}

nlohmann::json ratios_json(const SplitRatios& r) {
  return {{"train", r.train}, {"val", r.val}, {"test", r.test}};
}

std::vector<std::string> stems(const std::vector<fs::path>& files) {
  std::vector<std::string> ids;
  for (const auto& f : files) ids.push_back(f.stem().string());
  return ids;
}

}  // namespace

DatasetManifest build_click_dataset(const fs::path& corpus, const ClickDatasetOptions& opts,
                                    const PostProcessor* post, const fs::path& out) {
  opts.click.validate();
  if (opts.postprocess && !post) throw UsageError("dataset", "post-processing requested without a processor");
  const auto files = list_corpus(corpus);
  const auto ids = stems(files);
  const auto splits = assign_splits(ids, opts.ratios, opts.click.rng_seed);
  prepare_output(corpus, out);

  std::vector<PieceOutput> pieces(files.size());
  parallel_for(files.size(), opts.jobs, [&](std::size_t i) {
    const auto piece = load_piece(files[i]);
    const auto segments = segment_piece(piece, opts.max_segments, ids[i]);
    const std::uint64_t seed = piece_seed(opts.click.rng_seed, ids[i]);
    for (std::size_t k = 0; k < segments.size(); ++k) {
      auto clicked = synthesize_click_segment(segments[k], opts.click, seed, k, opts.postprocess ? post : nullptr);
      DatasetRecord r;
      r.segment_id = segment_name(ids[i], k);
      r.source_id = ids[i];
      r.offset = segments[k].offset_samples();
      r.split = splits[i];
      r.file = r.segment_id + ".wav";
      r.target = click_target(clicked.event);
      r.provenance = {{"click", clicked.event ? to_json(*clicked.event) : nlohmann::json(nullptr)}};
      r.postprocess = clicked.postprocess;
      write_segment(clicked.segment, out / r.split / r.file);
      pieces[i].records.push_back(std::move(r));
    }
  });

  nlohmann::json config = {{"click", to_json(opts.click)},
                           {"postprocess", opts.postprocess},
                           {"ratios", ratios_json(opts.ratios)},
                           {"max_segments", opts.max_segments}};
  return finalize(out, "click", config, ids, splits, pieces);
}

DatasetManifest build_glitch_dataset(const fs::path& corpus, const GlitchDatasetOptions& opts,
                                     const CommandEncoder& encoder, const mp3::Decoder& decoder,
                                     const fs::path& out) {
  opts.corruption.validate();
  opts.target.validate();
  const auto files = list_corpus(corpus);
  const auto ids = stems(files);
  const auto splits = assign_splits(ids, opts.ratios, opts.corruption.rng_seed);
  prepare_output(corpus, out);
  const fs::path cache = out / "mp3";
  fs::create_directories(cache);

  std::vector<PieceOutput> pieces(files.size());
  parallel_for(files.size(), opts.jobs, [&](std::size_t i) {
    const auto& id = ids[i];
    const auto mp3_path = cache / (id + ".mp3");
    const auto len_path = cache / (id + ".clean.json");
    mp3::Bytes stream;
    if (fs::exists(mp3_path)) {
      stream = read_file_bytes(mp3_path);
    } else {
      stream = encoder.encode(load_piece(files[i]));
      write_file_bytes(mp3_path, stream);
    }

    mp3::CorruptionConfig ccfg = opts.corruption;
    ccfg.rng_seed = piece_seed(opts.corruption.rng_seed, id);
    auto result = mp3::validated_corrupt(stream, ccfg, decoder);

    const std::size_t clean_len = result.clean.frame_count();
    if (std::ifstream cached(len_path); cached) {
      nlohmann::json j;
      cached >> j;
      if (j.at("clean_frames").get<std::size_t>() != clean_len) {
        throw DataError("dataset", "clean decode length of " + id + " changed since the cached run (" +
                                       std::to_string(j.at("clean_frames").get<std::size_t>()) + " vs " +
                                       std::to_string(clean_len) + "); delete " + cache.string() +
                                       " to rebuild");
      }
    } else {
      std::ofstream(len_path) << nlohmann::json{{"clean_frames", clean_len}}.dump() << '\n';
    }

    write_file_bytes(cache / (id + ".glitch.mp3"), result.bytes);
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : result.records) records.push_back(mp3::to_json(r));
    std::ofstream(cache / (id + ".glitch.json"))
        << nlohmann::json{{"config", mp3::to_json(ccfg)}, {"records", records}}.dump(2) << '\n';

    const auto clean = clamp_full_scale(mixdown_mono(result.clean));
    const auto degraded = clamp_full_scale(mixdown_mono(result.degraded));
    const auto clean_segs = segment_piece(clean, opts.max_segments, id);
    const auto deg_segs = segment_piece(degraded, opts.max_segments, id);
    if (clean_segs.size() != deg_segs.size()) {
      throw DataError("dataset", "clean and degraded decodings of " + id + " segment differently");
    }

    const int spf = result.index.frames.empty() ? 1152 : mp3::samples_per_frame(result.index.frames.front().header);
    const std::size_t first_audio = result.index.metadata_frame ? 1 : 0;
    for (std::size_t k = 0; k < deg_segs.size(); ++k) {
      DatasetRecord r;
      r.segment_id = segment_name(id, k);
      r.source_id = id;
      r.offset = deg_segs[k].offset_samples();
      r.split = splits[i];
      r.file = r.segment_id + ".wav";
      r.clean_file = r.segment_id + ".clean.wav";
      r.target = glitch_target(clean_segs[k], deg_segs[k], opts.target);
      // Frames whose nominal sample span overlaps this segment.
      nlohmann::json frames = nlohmann::json::array();
      for (const auto& rec : result.records) {
        if (!rec.survived || rec.frame_ordinal < first_audio) continue;
        const auto start = static_cast<std::int64_t>((rec.frame_ordinal - first_audio) * spf);
        if (start + spf > r.offset && start < r.offset + static_cast<std::int64_t>(kSegmentLength)) {
          frames.push_back(rec.frame_ordinal);
        }
      }
      r.provenance = {{"corruption", {{"records", id + ".glitch.json"}, {"frames", frames}}}};
      write_segment(deg_segs[k], out / r.split / r.file);
      write_segment(clean_segs[k], out / r.split / *r.clean_file);
      pieces[i].records.push_back(std::move(r));
    }
  });

  nlohmann::json config = {{"corruption", mp3::to_json(opts.corruption)},
                           {"target", to_json(opts.target)},
                           {"ratios", ratios_json(opts.ratios)},
                           {"max_segments", opts.max_segments}};
  return finalize(out, "glitch", config, ids, splits, pieces);
}

}  // namespace defectkit
