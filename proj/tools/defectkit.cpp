// SPDX-License-Identifier: Apache-2.0
//
// defectkit: click and MP3-glitch dataset synthesis, detector training and
// evaluation from the command line.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "defectkit/baseline.hpp"
#include "defectkit/config.hpp"
#include "defectkit/dataset.hpp"
#include "defectkit/error.hpp"
#include "defectkit/eval.hpp"
#include "defectkit/nn/hooknet.hpp"
#include "defectkit/nn/train.hpp"
#include "defectkit/wave.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace defectkit;

namespace {

// Options shared by every subcommand; flags set here override the config file.
struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  bool quiet = false;
};

// Flag overrides collected as a JSON merge patch over the config file.
class Overrides {
 public:
  template <typename T>
  void set(std::initializer_list<const char*> path, const std::optional<T>& v) {
    if (v) at(path) = *v;
  }
  void set_string(std::initializer_list<const char*> path, const std::string& v) {
    if (!v.empty()) at(path) = v;
  }
  const json& patch() const { return patch_; }

 private:
  json& at(std::initializer_list<const char*> path) {
    json* j = &patch_;
    for (const char* key : path) j = &(*j)[key];
    return *j;
  }
  json patch_ = json::object();
};

ToolkitConfig resolve(const Globals& g, Overrides o) {
  o.set({"seed"}, g.seed);
  o.set({"jobs"}, g.jobs);
  std::optional<fs::path> file;
  if (!g.config.empty()) file = g.config;
  return resolve_config(file, o.patch());
}

const std::string& require_path(const std::string& value, const char* what) {
  if (value.empty()) throw UsageError("cli", std::string("missing ") + what);
  return value;
}

void info(const Globals& g, const std::string& line) {
  if (!g.quiet) std::cerr << line << '\n';
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string metrics_line(const Metrics& m) {
  return "accuracy " + fixed(m.accuracy, 6) + "  precision " + fixed(m.precision) + "  recall " +
         fixed(m.recall) + "  f1 " + fixed(m.f1) + "  (tp " + std::to_string(m.counts.tp) + ", fp " +
         std::to_string(m.counts.fp) + ", fn " + std::to_string(m.counts.fn) + ")";
}

void manifest_summary(const Globals& g, const DatasetManifest& m) {
  info(g, "dataset " + m.dataset_id + ": " + std::to_string(m.segment_count) + " segments (train " +
              std::to_string(m.split_counts.at("train")) + ", val " + std::to_string(m.split_counts.at("val")) +
              ", test " + std::to_string(m.split_counts.at("test")) + "), positive fraction " +
              fixed(m.positive_fraction * 100.0, 4) + "%");
}

// Segments held in memory, for detection on a single file.
class SegmentList final : public nn::SegmentSource {
 public:
  explicit SegmentList(const std::vector<Segment>& segs) : segs_(segs) {}
  std::size_t size() const override { return segs_.size(); }
  void get(std::size_t i, std::span<float> samples, TargetVector& target) const override {
    std::copy(segs_[i].samples().begin(), segs_[i].samples().end(), samples.begin());
    target.fill(0.0f);
  }

 private:
  const std::vector<Segment>& segs_;
};

struct LoadedModel {
  nn::Checkpoint checkpoint;
  std::unique_ptr<nn::HookNet<float>> net;
  std::string digest;
};

LoadedModel load_model(const fs::path& path) {
  LoadedModel m;
  m.checkpoint = nn::load_checkpoint(path);
  m.net = std::make_unique<nn::HookNet<float>>(m.checkpoint.model);
  nn::restore(*m.net, m.checkpoint);
  m.digest = sha256_hex(read_file_bytes(path));
  return m;
}

TargetVector model_detect(nn::HookNet<float>& net, const Segment& s, double threshold) {
  nn::Tensor<float> x(1, 1, kSegmentLength);
  std::copy(s.samples().begin(), s.samples().end(), x.data.begin());
  const auto prob = net.forward(x, false);
  TargetVector p;
  std::copy(prob.data.begin(), prob.data.begin() + kTargetLength, p.begin());
  return nn::quantise(p, threshold);
}

void write_evaluation(const Evaluation& ev, const fs::path& dir) {
  fs::create_directories(dir);
  write_report(ev.report, dir / "report.json");
  write_report_csv(ev.report, dir / "report.csv");
  write_predictions(ev.predictions, dir / "predictions.jsonl");
}

// ---------------------------------------------------------------------------

struct ClickifyArgs {
  std::string corpus, out;
  std::optional<double> p_click;
  std::optional<std::size_t> max_segments;
  bool postprocess = false;
};

int cmd_clickify(const Globals& g, const ClickifyArgs& a) {
  Overrides o;
  o.set_string({"paths", "corpus"}, a.corpus);
  o.set_string({"paths", "dataset"}, a.out);
  o.set({"click", "p_click"}, a.p_click);
  o.set({"max_segments"}, a.max_segments);
  if (a.postprocess) o.set({"postprocess"}, std::optional<bool>(true));
  const auto cfg = resolve(g, o);

  ClickDatasetOptions opts;
  opts.click = cfg.click;
  opts.postprocess = cfg.postprocess;
  opts.ratios = cfg.ratios;
  opts.max_segments = cfg.max_segments;
  opts.jobs = cfg.jobs;
  std::optional<CommandPostProcessor> tool;
  if (cfg.postprocess) {
    const auto adapter = postprocessor_adapter(cfg);
    probe_adapter(adapter, "POSTPROCESSOR");
    tool.emplace(adapter, postprocessor_dialect(cfg));
  }
  const fs::path out = require_path(cfg.paths.dataset, "--out (dataset directory)");
  const auto m = build_click_dataset(require_path(cfg.paths.corpus, "--corpus"), opts,
                                     tool ? &*tool : nullptr, out);
  write_config_snapshot(cfg, out);
  manifest_summary(g, m);
  return 0;
}

struct GlitchifyArgs {
  std::string corpus, out;
  std::optional<double> p_glitch, tau;
  std::optional<std::size_t> max_segments;
};

int cmd_glitchify(const Globals& g, const GlitchifyArgs& a) {
  Overrides o;
  o.set_string({"paths", "corpus"}, a.corpus);
  o.set_string({"paths", "dataset"}, a.out);
  o.set({"corruption", "p_glitch"}, a.p_glitch);
  o.set({"glitch_target", "threshold_tau"}, a.tau);
  o.set({"max_segments"}, a.max_segments);
  const auto cfg = resolve(g, o);

  const auto enc = encoder_adapter(cfg), dec = decoder_adapter(cfg);
  probe_adapter(enc, "ENCODER");
  probe_adapter(dec, "DECODER");
  GlitchDatasetOptions opts;
  opts.corruption = cfg.corruption;
  opts.target = cfg.glitch_target;
  opts.ratios = cfg.ratios;
  opts.max_segments = cfg.max_segments;
  opts.jobs = cfg.jobs;
  const fs::path out = require_path(cfg.paths.dataset, "--out (dataset directory)");
  const auto m = build_glitch_dataset(require_path(cfg.paths.corpus, "--corpus"), opts, CommandEncoder(enc),
                                      CommandDecoder(dec), out);
  write_config_snapshot(cfg, out);
  manifest_summary(g, m);
  return 0;
}

struct ModelArgs {
  std::optional<int> blocks, contract_growth, expand_growth, kernel;
  std::optional<double> prior;

  void apply(Overrides& o) const {
    o.set({"model", "num_blocks"}, blocks);
    o.set({"model", "contract_filter_growth"}, contract_growth);
    o.set({"model", "expand_filter_growth"}, expand_growth);
    o.set({"model", "kernel_size"}, kernel);
    o.set({"model", "output_bias_init_prior"}, prior);
  }
};

void add_model_options(CLI::App* app, ModelArgs& m) {
  app->add_option("--blocks", m.blocks, "Number of contracting (and expanding) blocks");
  app->add_option("--contract-growth", m.contract_growth, "Channels added per contracting block");
  app->add_option("--expand-growth", m.expand_growth, "Channels added per expanding block");
  app->add_option("--kernel", m.kernel, "Convolution kernel size");
  app->add_option("--prior", m.prior, "Expected positive-target fraction (output bias init)");
}

struct TrainArgs {
  std::string dataset, out;
  std::optional<std::size_t> synthetic_train, synthetic_val, batch_size;
  std::optional<int> epochs;
  std::optional<double> lr, stop_at_f1;
  ModelArgs model;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  Overrides o;
  o.set_string({"paths", "dataset"}, a.dataset);
  o.set_string({"paths", "checkpoints"}, a.out);
  o.set({"synthetic", "train_segments"}, a.synthetic_train);
  o.set({"synthetic", "val_segments"}, a.synthetic_val);
  o.set({"train", "batch_size"}, a.batch_size);
  o.set({"train", "max_epochs"}, a.epochs);
  o.set({"train", "learning_rate"}, a.lr);
  o.set({"train", "stop_at_val_f1"}, a.stop_at_f1);
  a.model.apply(o);
  const auto cfg = resolve(g, o);
  const fs::path out = require_path(cfg.paths.checkpoints, "--out (run directory)");

  std::unique_ptr<nn::SegmentSource> train_src, val_src;
  std::optional<Dataset> ds;
  if (cfg.synthetic.train_segments > 0) {
    if (cfg.synthetic.val_segments == 0) throw UsageError("cli", "--synthetic-val must be positive");
    train_src = std::make_unique<nn::SyntheticClickSource>(cfg.synthetic.train_segments,
                                                           derive_seed(cfg.seed, "synthetic/train"), cfg.click);
    val_src = std::make_unique<nn::SyntheticClickSource>(cfg.synthetic.val_segments,
                                                         derive_seed(cfg.seed, "synthetic/val"), cfg.click);
  } else {
    ds = Dataset::open(require_path(cfg.paths.dataset, "--dataset or --synthetic-train"));
    train_src = std::make_unique<nn::DatasetSource>(*ds, "train");
    val_src = std::make_unique<nn::DatasetSource>(*ds, "val");
  }

  nn::HookNet<float> net(cfg.model);
  info(g, "model: " + std::to_string(net.param_count()) + " parameters; " + std::to_string(train_src->size()) +
              " training / " + std::to_string(val_src->size()) + " validation segments");
  fs::create_directories(out);
  write_config_snapshot(cfg, out);
  const auto res = nn::train(net, *train_src, *val_src, cfg.train, out, [&](const nn::EpochRecord& r) {
    info(g, "epoch " + std::to_string(r.epoch) + "  loss " + fixed(r.train_loss, 5) + "  lr " + fixed(r.lr, 6) +
                "  val " + metrics_line(r.val));
  });
  info(g, "best epoch " + std::to_string(res.best_epoch) + " (validation accuracy " +
              fixed(res.best_val_accuracy, 6) + "); checkpoint " + (out / "best.ckpt").string());
  return 0;
}

struct DetectArgs {
  std::string checkpoint, input, out;
  std::optional<double> threshold;
  bool baseline = false;
};

int cmd_detect(const Globals& g, const DetectArgs& a) {
  Overrides o;
  if (a.threshold) {
    if (a.baseline) o.set({"baseline", "detection_threshold_db"}, a.threshold);
    else o.set({"train", "decision_threshold"}, a.threshold);
  }
  const auto cfg = resolve(g, o);
  const auto audio = mixdown_mono(read_audio(require_path(a.input, "--in")));
  if (audio.sample_rate != kDefaultSampleRate) {
    throw DataError("cli", a.input + " is sampled at " + std::to_string(audio.sample_rate) + " Hz; expected 44100");
  }
  if (audio.samples.size() < kSegmentLength) {
    throw DataError("cli", a.input + " is too short: " + std::to_string(audio.samples.size()) +
                               " samples, at least " + std::to_string(kSegmentLength) + " needed");
  }
  const auto segs = segment_piece(audio, std::numeric_limits<std::size_t>::max(), fs::path(a.input).stem().string());

  json detections = json::array();
  json detector;
  auto emit = [&](std::size_t seg, std::size_t frame, std::optional<double> prob) {
    const std::size_t sample = seg * kSegmentLength + frame * kSamplesPerTarget;
    json d = {{"segment", seg}, {"frame", frame}, {"sample", sample},
              {"time_s", static_cast<double>(sample) / kDefaultSampleRate}};
    if (prob) d["probability"] = *prob;
    detections.push_back(d);
  };
  if (a.baseline) {
    detector = {{"kind", "baseline"}, {"config", to_json(cfg.baseline)}};
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const auto d = detect_clicks_segment(segs[s], cfg.baseline);
      for (std::size_t f = 0; f < kTargetLength; ++f) {
        if (d.target[f] > 0.5f) emit(s, f, std::nullopt);
      }
    }
  } else {
    auto m = load_model(require_path(a.checkpoint, "--checkpoint (or --baseline)"));
    const double threshold = a.threshold.value_or(m.checkpoint.train.decision_threshold);
    detector = {{"kind", "hooknet"}, {"checkpoint_sha256", m.digest}, {"threshold", threshold}};
    const SegmentList src(segs);
    const auto pred = nn::predict(*m.net, src, threshold, 8);
    for (std::size_t s = 0; s < segs.size(); ++s) {
      for (std::size_t f = 0; f < kTargetLength; ++f) {
        if (pred.binary[s][f] > 0.5f) emit(s, f, pred.probability[s][f]);
      }
    }
  }
  const json result = {{"input", a.input},
                       {"sample_rate", kDefaultSampleRate},
                       {"segments", segs.size()},
                       {"ignored_tail_samples", audio.samples.size() - segs.size() * kSegmentLength},
                       {"detector", detector},
                       {"detections", detections}};
  if (a.out.empty()) {
    std::cout << result.dump(2) << '\n';
  } else {
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out, std::ios::trunc) << result.dump(2) << '\n';
    info(g, std::to_string(detections.size()) + " detections in " + std::to_string(segs.size()) +
                " segments written to " + a.out);
  }
  return 0;
}

struct BaselineArgs {
  std::string dataset, out;
  std::vector<double> thresholds;
};

int cmd_baseline(const Globals& g, const BaselineArgs& a) {
  Overrides o;
  o.set_string({"paths", "dataset"}, a.dataset);
  o.set_string({"paths", "reports"}, a.out);
  const auto cfg = resolve(g, o);
  const auto ds = Dataset::open(require_path(cfg.paths.dataset, "--dataset"));
  const fs::path out = require_path(cfg.paths.reports, "--out (report directory)");

  std::vector<double> thresholds = a.thresholds;
  if (thresholds.empty()) thresholds.assign(std::begin(kDefaultSweepThresholds), std::end(kDefaultSweepThresholds));
  const auto sweep = threshold_sweep(ds, thresholds, cfg.baseline, cfg.jobs);

  auto chosen = cfg.baseline;
  chosen.detection_threshold_db = sweep.selected_threshold;
  auto ev = evaluate_detector([&](const Segment& s) { return detect_clicks_segment(s, chosen).target; }, ds, "test",
                              "baseline", {{"baseline", to_json(cfg.baseline)}, {"thresholds", thresholds}});
  ev.report.sweep = sweep.rows;
  ev.report.selected_threshold = sweep.selected_threshold;
  write_evaluation(ev, out);
  write_config_snapshot(cfg, out);
  for (const auto& row : sweep.rows) {
    info(g, "threshold " + fixed(row.threshold, 1) + " dB  val " + metrics_line(row.validation));
  }
  info(g, "selected " + fixed(sweep.selected_threshold, 1) + " dB; test " + metrics_line(ev.report.metrics));
  return 0;
}

struct EvaluateArgs {
  std::string dataset, checkpoint, out, split = "test";
  std::optional<double> threshold;
  bool baseline = false;
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a) {
  Overrides o;
  o.set_string({"paths", "dataset"}, a.dataset);
  o.set_string({"paths", "reports"}, a.out);
  if (a.threshold && a.baseline) o.set({"baseline", "detection_threshold_db"}, a.threshold);
  const auto cfg = resolve(g, o);
  const auto ds = Dataset::open(require_path(cfg.paths.dataset, "--dataset"));
  const fs::path out = require_path(cfg.paths.reports, "--out (report directory)");

  Evaluation ev;
  if (a.baseline) {
    ev = evaluate_detector([&](const Segment& s) { return detect_clicks_segment(s, cfg.baseline).target; }, ds,
                           a.split, "baseline", {{"baseline", to_json(cfg.baseline)}});
    ev.report.selected_threshold = cfg.baseline.detection_threshold_db;
  } else {
    auto m = load_model(require_path(a.checkpoint, "--checkpoint (or --baseline)"));
    const double threshold = a.threshold.value_or(m.checkpoint.train.decision_threshold);
    ev = evaluate_detector([&](const Segment& s) { return model_detect(*m.net, s, threshold); }, ds, a.split,
                           "hooknet", {{"checkpoint_sha256", m.digest}, {"threshold", threshold}});
    ev.report.selected_threshold = threshold;
  }
  write_evaluation(ev, out);
  write_config_snapshot(cfg, out);
  info(g, ev.report.detector_id + " on " + ds.id() + "/" + a.split + ": " + metrics_line(ev.report.metrics));
  return 0;
}

struct CompareArgs {
  std::string a, b, out;
};

int cmd_compare(const Globals&, const CompareArgs& a) {
  const auto c = compare_reports(read_report(a.a), read_report(a.b));
  std::cout << c.to_text();
  if (!a.out.empty()) {
    const fs::path out(a.out);
    fs::create_directories(out);
    std::ofstream(out / "comparison.csv", std::ios::trunc) << c.to_csv();
    std::ofstream(out / "comparison.txt", std::ios::trunc) << c.to_text();
  }
  return 0;
}

int cmd_model_summary(const Globals& g, const ModelArgs& m) {
  Overrides o;
  m.apply(o);
  const auto cfg = resolve(g, o);
  std::cout << nn::model_summary(cfg.model);
  return 0;
}

int exit_code(ErrorCategory c) { return static_cast<int>(c); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"defectkit: synthesize click and MP3-glitch datasets, train and evaluate defect detectors"};
  app.set_version_flag("--version", std::string(kToolkitVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON config file (flags override it)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global random seed");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress output");

  ClickifyArgs ck;
  auto* clickify = app.add_subcommand("clickify", "Build a click dataset from a WAV corpus");
  clickify->add_option("--corpus", ck.corpus, "Directory of .wav pieces");
  clickify->add_option("--out", ck.out, "Dataset output directory");
  clickify->add_option("--p-click", ck.p_click, "Click probability per segment");
  clickify->add_option("--max-segments", ck.max_segments, "Segments taken per piece");
  clickify->add_flag("--postprocess", ck.postprocess, "Apply random mild effects to every segment");

  GlitchifyArgs gl;
  auto* glitchify = app.add_subcommand("glitchify", "Build an MP3-glitch dataset from a WAV corpus");
  glitchify->add_option("--corpus", gl.corpus, "Directory of .wav pieces");
  glitchify->add_option("--out", gl.out, "Dataset output directory");
  glitchify->add_option("--p-glitch", gl.p_glitch, "Frame corruption probability");
  glitchify->add_option("--tau", gl.tau, "Log-spectral distance threshold for glitch targets");
  glitchify->add_option("--max-segments", gl.max_segments, "Segments taken per piece");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a detector network");
  train->add_option("--dataset", tr.dataset, "Dataset directory (train and val splits)");
  train->add_option("--out", tr.out, "Run directory for checkpoints and logs");
  train->add_option("--synthetic-train", tr.synthetic_train, "Train on this many synthetic click segments");
  train->add_option("--synthetic-val", tr.synthetic_val, "Synthetic validation segments");
  train->add_option("--epochs", tr.epochs, "Maximum epochs");
  train->add_option("--batch-size", tr.batch_size, "Mini-batch size");
  train->add_option("--lr", tr.lr, "Initial learning rate");
  train->add_option("--stop-at-f1", tr.stop_at_f1, "Stop once validation F1 reaches this value");
  add_model_options(train, tr.model);

  DetectArgs dt;
  auto* detect = app.add_subcommand("detect", "Detect defects in one audio file");
  detect->add_option("--checkpoint", dt.checkpoint, "Trained network checkpoint");
  detect->add_option("--in", dt.input, "Input WAV file")->required();
  detect->add_option("--out", dt.out, "Write detections here instead of stdout");
  detect->add_option("--threshold", dt.threshold, "Probability threshold (dB level with --baseline)");
  detect->add_flag("--baseline", dt.baseline, "Use the LPC baseline detector");

  BaselineArgs bl;
  auto* baseline = app.add_subcommand("baseline", "Sweep the LPC baseline detector over a click dataset");
  baseline->add_option("--dataset", bl.dataset, "Dataset directory");
  baseline->add_option("--out", bl.out, "Report directory");
  baseline->add_option("--thresholds", bl.thresholds, "Detection thresholds in dB")->delimiter(',');

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a detector on one dataset split");
  evaluate->add_option("--dataset", ev.dataset, "Dataset directory");
  evaluate->add_option("--checkpoint", ev.checkpoint, "Trained network checkpoint");
  evaluate->add_option("--split", ev.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--threshold", ev.threshold, "Probability threshold (dB level with --baseline)");
  evaluate->add_option("--out", ev.out, "Report directory");
  evaluate->add_flag("--baseline", ev.baseline, "Evaluate the LPC baseline detector");

  CompareArgs cp;
  auto* compare = app.add_subcommand("compare", "Compare two reports on the same dataset");
  compare->add_option("report_a", cp.a, "First report.json")->required()->check(CLI::ExistingFile);
  compare->add_option("report_b", cp.b, "Second report.json")->required()->check(CLI::ExistingFile);
  compare->add_option("--out", cp.out, "Directory for comparison.csv and comparison.txt");

  ModelArgs ms;
  auto* summary = app.add_subcommand("model-summary", "Print the network layout and parameter count");
  add_model_options(summary, ms);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorCategory::Usage);
  }

  try {
    if (*clickify) return cmd_clickify(g, ck);
    if (*glitchify) return cmd_glitchify(g, gl);
    if (*train) return cmd_train(g, tr);
    if (*detect) return cmd_detect(g, dt);
    if (*baseline) return cmd_baseline(g, bl);
    if (*evaluate) return cmd_evaluate(g, ev);
    if (*compare) return cmd_compare(g, cp);
    if (*summary) return cmd_model_summary(g, ms);
  } catch (const Error& e) {
    std::cerr << "defectkit: error: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "defectkit: error: io: " << e.what() << '\n';
    return exit_code(ErrorCategory::Data);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "defectkit: error: json: " << e.what() << '\n';
    return exit_code(ErrorCategory::Data);
  }
  return exit_code(ErrorCategory::Usage);
}
