// SPDX-License-Identifier: Apache-2.0

#include "defectkit/eval.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include "defectkit/dataset.hpp"
#include "defectkit/error.hpp"

namespace defectkit {

void ConfusionCounts::add(const TargetVector& pred, const TargetVector& target) {
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] > 0.5f;
    const bool t = target[i] > 0.5f;
    if (p && t) ++tp;
    else if (p) ++fp;
    else if (t) ++fn;
    else ++tn;
  }
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

Metrics metrics_from_counts(const ConfusionCounts& c) {
  Metrics m;
  m.counts = c;
  const auto ratio = [](std::uint64_t a, std::uint64_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.precision_defined = c.tp + c.fp > 0;
  m.recall_defined = c.tp + c.fn > 0;
  m.positive_class_defined = m.precision_defined || m.recall_defined;
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

Metrics compute_metrics(std::span<const TargetVector> pred, std::span<const TargetVector> target) {
  if (pred.size() != target.size()) {
    throw UsageError("eval", "prediction and target counts differ (" + std::to_string(pred.size()) + " vs " +
                                 std::to_string(target.size()) + ")");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) c.add(pred[i], target[i]);
  return metrics_from_counts(c);
}

std::string config_digest(const nlohmann::json& config) {
  const std::string text = config.dump();
  return sha256_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCategory::Data, "eval", "SHA-256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::optional<std::string> report_timestamp() {
  const char* epoch = std::getenv("SOURCE_DATE_EPOCH");
  if (!epoch || !*epoch) return std::nullopt;
  char* end = nullptr;
  const long long secs = std::strtoll(epoch, &end, 10);
  if (*end != '\0') return std::nullopt;
  const std::time_t t = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return std::string(buf);
}

nlohmann::json to_json(const Metrics& m) {
  return {{"accuracy", m.accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"precision_defined", m.precision_defined},
          {"recall_defined", m.recall_defined},
          {"positive_class_defined", m.positive_class_defined},
          {"counts", {{"tp", m.counts.tp}, {"fp", m.counts.fp}, {"tn", m.counts.tn}, {"fn", m.counts.fn}}}};
}

Metrics metrics_from_json(const nlohmann::json& j) {
  ConfusionCounts c;
  const auto& cj = j.at("counts");
  c.tp = cj.at("tp").get<std::uint64_t>();
  c.fp = cj.at("fp").get<std::uint64_t>();
  c.tn = cj.at("tn").get<std::uint64_t>();
  c.fn = cj.at("fn").get<std::uint64_t>();
  return metrics_from_counts(c);
}

nlohmann::json to_json(const Report& r) {
  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& row : r.sweep) {
    sweep.push_back({{"threshold", row.threshold}, {"validation", to_json(row.validation)}, {"test", to_json(row.test)}});
  }
  return {{"detector_id", r.detector_id},
          {"dataset_id", r.dataset_id},
          {"split", r.split},
          {"config_digest", r.config_digest},
          {"metrics", to_json(r.metrics)},
          {"sweep", sweep},
          {"selected_threshold", r.selected_threshold ? nlohmann::json(*r.selected_threshold) : nlohmann::json()},
          {"timestamp", r.timestamp ? nlohmann::json(*r.timestamp) : nlohmann::json()},
          {"toolkit_version", r.toolkit_version}};
}

Report report_from_json(const nlohmann::json& j) {
  Report r;
  r.detector_id = j.at("detector_id").get<std::string>();
  r.dataset_id = j.at("dataset_id").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.config_digest = j.at("config_digest").get<std::string>();
  r.metrics = metrics_from_json(j.at("metrics"));
  for (const auto& row : j.value("sweep", nlohmann::json::array())) {
    r.sweep.push_back({row.at("threshold").get<double>(), metrics_from_json(row.at("validation")),
                       metrics_from_json(row.at("test"))});
  }
  if (j.contains("selected_threshold") && !j["selected_threshold"].is_null()) {
    r.selected_threshold = j["selected_threshold"].get<double>();
  }
  if (j.contains("timestamp") && !j["timestamp"].is_null()) r.timestamp = j["timestamp"].get<std::string>();
  r.toolkit_version = j.value("toolkit_version", "");
  return r;
}

void write_report(const Report& r, const std::filesystem::path& json_path) {
  std::ofstream f(json_path, std::ios::trunc);
  f << to_json(r).dump(2) << '\n';
  if (!f) throw DataError("eval", "cannot write " + json_path.string());
}

namespace {

std::string csv_row(const std::string& threshold, const std::string& split, const Metrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%.6f,%llu,%llu,%llu,%llu\n", threshold.c_str(),
                split.c_str(), m.accuracy, m.precision, m.recall, m.f1,
                static_cast<unsigned long long>(m.counts.tp), static_cast<unsigned long long>(m.counts.fp),
                static_cast<unsigned long long>(m.counts.tn), static_cast<unsigned long long>(m.counts.fn));
  return buf;
}

std::string threshold_text(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", t);
  return buf;
}

}  // namespace

void write_report_csv(const Report& r, const std::filesystem::path& csv_path) {
  std::ofstream f(csv_path, std::ios::trunc);
  f << "threshold,split,accuracy,precision,recall,f1,tp,fp,tn,fn\n";
  const std::string sel = r.selected_threshold ? threshold_text(*r.selected_threshold) : "";
  f << csv_row(sel, r.split, r.metrics);
  for (const auto& row : r.sweep) {
    f << csv_row(threshold_text(row.threshold), "val", row.validation);
    f << csv_row(threshold_text(row.threshold), "test", row.test);
  }
  if (!f) throw DataError("eval", "cannot write " + csv_path.string());
}

Report read_report(const std::filesystem::path& json_path) {
  std::ifstream f(json_path);
  if (!f) throw DataError("eval", "cannot read report " + json_path.string());
  try {
    return report_from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("eval", "malformed report " + json_path.string() + ": " + e.what());
  }
}

Evaluation evaluate_detector(const SegmentDetector& detector, const Dataset& dataset, const std::string& split,
                             const std::string& detector_id, const nlohmann::json& detector_config) {
  Evaluation ev;
  ConfusionCounts counts;
  for (const auto& rec : dataset.records(split)) {
    const auto seg = dataset.load_segment(rec);
    SegmentPrediction p{rec.segment_id, detector(seg), rec.target};
    counts.add(p.prediction, p.target);
    ev.predictions.push_back(std::move(p));
  }
  ev.report.detector_id = detector_id;
  ev.report.dataset_id = dataset.id();
  ev.report.split = split;
  ev.report.config_digest = config_digest(detector_config);
  ev.report.metrics = metrics_from_counts(counts);
  ev.report.timestamp = report_timestamp();
  ev.report.toolkit_version = kToolkitVersion;
  return ev;
}

void write_predictions(const std::vector<SegmentPrediction>& preds, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  for (const auto& p : preds) {
    f << nlohmann::json{{"segment_id", p.segment_id}, {"prediction", p.prediction}, {"target", p.target}}.dump()
      << '\n';
  }
  if (!f) throw DataError("eval", "cannot write " + path.string());
}

std::vector<SegmentPrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("eval", "cannot read " + path.string());
  std::vector<SegmentPrediction> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    SegmentPrediction p;
    p.segment_id = j.at("segment_id").get<std::string>();
    p.prediction = j.at("prediction").get<TargetVector>();
    p.target = j.at("target").get<TargetVector>();
    out.push_back(std::move(p));
  }
  return out;
}

Comparison compare_reports(const Report& a, const Report& b) {
  if (a.dataset_id != b.dataset_id) {
    throw DataError("eval", "reports cover different datasets (" + a.dataset_id + " vs " + b.dataset_id + ")");
  }
  if (a.split != b.split) {
    throw DataError("eval", "reports cover different splits (" + a.split + " vs " + b.split + ")");
  }
  Comparison c{a.dataset_id, a.detector_id, b.detector_id, {}};
  const std::pair<const char*, double Metrics::*> fields[] = {
      {"accuracy", &Metrics::accuracy}, {"precision", &Metrics::precision},
      {"recall", &Metrics::recall},     {"f1", &Metrics::f1}};
  for (const auto& [name, field] : fields) {
    c.rows.push_back({name, a.metrics.*field, b.metrics.*field, b.metrics.*field - a.metrics.*field});
  }
  return c;
}

std::string Comparison::to_csv() const {
  std::ostringstream out;
  out << "metric," << detector_a << ',' << detector_b << ",delta\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%+.6f\n", r.metric.c_str(), r.a, r.b, r.delta);
    out << buf;
  }
  return out.str();
}

std::string Comparison::to_text() const {
  std::ostringstream out;
  out << "dataset " << dataset_id << '\n';
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %14s %14s %10s\n", "metric", detector_a.substr(0, 14).c_str(),
                detector_b.substr(0, 14).c_str(), "delta");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-10s %14.4f %14.4f %+10.4f\n", r.metric.c_str(), r.a, r.b, r.delta);
    out << buf;
  }
  return out.str();
}

}  // namespace defectkit
