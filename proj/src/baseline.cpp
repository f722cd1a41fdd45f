// SPDX-License-Identifier: Apache-2.0

#include "defectkit/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "defectkit/dataset.hpp"
#include "defectkit/error.hpp"

namespace defectkit {

void BaselineConfig::validate() const {
  if (!(frame_size > hop_size && hop_size > 0)) throw UsageError("baseline", "need frame_size > hop_size > 0");
  if (lpc_order < 1 || static_cast<std::size_t>(2 * lpc_order) >= frame_size) {
    throw UsageError("baseline", "lpc_order must be positive and well below frame_size");
  }
  if (!(regularization >= 0.0)) throw UsageError("baseline", "regularization must be non-negative");
}

nlohmann::json to_json(const BaselineConfig& c) {
  return {{"lpc_order", c.lpc_order},
          {"detection_threshold_db", c.detection_threshold_db},
          {"frame_size", c.frame_size},
          {"hop_size", c.hop_size},
          {"power_estimation_threshold_db", c.power_estimation_threshold_db},
          {"silence_threshold_db", c.silence_threshold_db},
          {"regularization", c.regularization}};
}

BaselineConfig baseline_config_from_json(const nlohmann::json& j) {
  BaselineConfig c;
  c.lpc_order = j.value("lpc_order", c.lpc_order);
  c.detection_threshold_db = j.value("detection_threshold_db", c.detection_threshold_db);
  c.frame_size = j.value("frame_size", c.frame_size);
  c.hop_size = j.value("hop_size", c.hop_size);
  c.power_estimation_threshold_db = j.value("power_estimation_threshold_db", c.power_estimation_threshold_db);
  c.silence_threshold_db = j.value("silence_threshold_db", c.silence_threshold_db);
  c.regularization = j.value("regularization", c.regularization);
  c.validate();
  return c;
}

std::vector<double> autocorrelation(std::span<const float> x, int max_lag) {
  std::vector<double> r(static_cast<std::size_t>(max_lag) + 1, 0.0);
  const std::size_t n = x.size();
  for (int k = 0; k <= max_lag && static_cast<std::size_t>(k) < n; ++k) {
    double acc = 0.0;
    for (std::size_t i = static_cast<std::size_t>(k); i < n; ++i) {
      acc += static_cast<double>(x[i]) * static_cast<double>(x[i - k]);
    }
    r[k] = acc;
  }
  return r;
}

LpcResult levinson_durbin(std::span<const double> r, int order) {
  LpcResult res;
  res.coefficients.assign(static_cast<std::size_t>(order) + 1, 0.0);
  res.coefficients[0] = 1.0;
  res.reflection.assign(static_cast<std::size_t>(order), 0.0);
  res.error_power.push_back(r[0]);
  if (!(r[0] > 0.0)) {
    res.degenerate = true;
    return res;
  }
  auto& a = res.coefficients;
  std::vector<double> prev(a.size());
  double err = r[0];
  for (int m = 1; m <= order; ++m) {
    double acc = r[m];
    for (int k = 1; k < m; ++k) acc += a[k] * r[m - k];
    const double km = -acc / err;
    if (!(std::fabs(km) < 1.0)) {
      res.degenerate = true;
      break;
    }
    prev = a;
    for (int k = 1; k < m; ++k) a[k] = prev[k] + km * prev[m - k];
    a[m] = km;
    res.reflection[m - 1] = km;
    err *= 1.0 - km * km;
    res.error_power.push_back(err);
    if (!(err > 0.0)) {
      res.degenerate = true;
      break;
    }
  }
  return res;
}

LpcResult lpc_coefficients(std::span<const float> frame, int order, double regularization) {
  if (order < 1 || frame.size() <= static_cast<std::size_t>(order)) {
    throw UsageError("baseline", "frame must be longer than the LPC order");
  }
  auto r = autocorrelation(frame, order);
  r[0] *= 1.0 + regularization;
  return levinson_durbin(r, order);
}

std::vector<double> lpc_residual(std::span<const float> x, std::span<const double> a) {
  const std::size_t n = x.size();
  const std::size_t p = a.size() - 1;
  std::vector<double> e(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    if (i >= p) {
      for (std::size_t k = 0; k <= p; ++k) acc += a[k] * x[i - k];
    } else {
      for (std::size_t k = 0; k <= p && i + k < n; ++k) acc += a[k] * x[i + k];
    }
    e[i] = acc;
  }
  return e;
}

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

// Matched filter over the residual, mf[i] = sum_k a[k] e[i+k], evaluated
// where its support lies inside the frame: i in [order, n - order).
std::vector<double> matched_filter(std::span<const double> e, std::span<const double> a) {
  const std::size_t n = e.size();
  const std::size_t p = a.size() - 1;
  std::vector<double> mf(n - 2 * p, 0.0);
  for (std::size_t i = p; i < n - p; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k <= p; ++k) acc += a[k] * e[i + k];
    mf[i - p] = acc;
  }
  return mf;
}

// Level in dB above a robust floor: the median of the powers that lie within
// `estimation_db` of the overall median.
std::vector<double> levels_db(std::span<const double> power, double estimation_db) {
  const double cut = median_of({power.begin(), power.end()}) * std::pow(10.0, estimation_db / 10.0);
  std::vector<double> quiet;
  quiet.reserve(power.size());
  for (double v : power) {
    if (v <= cut) quiet.push_back(v);
  }
  const double floor = median_of(std::move(quiet));
  std::vector<double> out(power.size());
  for (std::size_t i = 0; i < power.size(); ++i) {
    if (floor > 0.0) {
      out[i] = 10.0 * std::log10(power[i] / floor);
    } else {
      out[i] = power[i] > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    }
  }
  return out;
}

}  // namespace

std::vector<ClickCandidate> frame_candidates(std::span<const float> frame, const BaselineConfig& cfg) {
  cfg.validate();
  std::vector<ClickCandidate> out;
  if (frame.size() <= static_cast<std::size_t>(2 * cfg.lpc_order)) return out;

  double energy = 0.0;
  for (float v : frame) energy += static_cast<double>(v) * v;
  const double mean_power = energy / static_cast<double>(frame.size());
  if (!(mean_power > 0.0) || 10.0 * std::log10(mean_power) < cfg.silence_threshold_db) return out;

  const auto lpc = lpc_coefficients(frame, cfg.lpc_order, cfg.regularization);
  const auto e = lpc_residual(frame, lpc.coefficients);
  const auto mf = matched_filter(e, lpc.coefficients);
  const std::size_t n = frame.size();
  const std::size_t p = static_cast<std::size_t>(cfg.lpc_order);

  // The matched filter needs `order` residual samples on both sides. Within
  // `order` of the frame edges the residual itself is scored instead, against
  // its own floor.
  std::vector<double> mf_power(mf.size()), e_power(n);
  for (std::size_t i = 0; i < mf.size(); ++i) mf_power[i] = mf[i] * mf[i];
  for (std::size_t i = 0; i < n; ++i) e_power[i] = e[i] * e[i];
  const auto mf_level = levels_db(mf_power, cfg.power_estimation_threshold_db);
  const auto e_level = levels_db(e_power, cfg.power_estimation_threshold_db);
  std::vector<double> level(n);
  for (std::size_t i = 0; i < n; ++i) {
    level[i] = (i >= p && i < n - p) ? mf_level[i - p] : e_level[i];
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double v = level[i];
    if (v == -std::numeric_limits<double>::infinity()) continue;
    bool peak = true;
    for (std::size_t j = i > p ? i - p : 0; j < i && peak; ++j) peak = v > level[j];
    for (std::size_t j = i + 1; j <= i + p && j < n && peak; ++j) peak = v >= level[j];
    if (peak) out.push_back({i, v});
  }
  return out;
}

std::vector<std::size_t> detect_clicks_frame(std::span<const float> frame, const BaselineConfig& cfg) {
  std::vector<std::size_t> pos;
  for (const auto& c : frame_candidates(frame, cfg)) {
    if (c.level_db > cfg.detection_threshold_db) pos.push_back(c.position);
  }
  return pos;
}

std::vector<ClickCandidate> segment_candidates(const Segment& s, const BaselineConfig& cfg) {
  cfg.validate();
  const auto x = s.samples();
  std::vector<ClickCandidate> all;
  for (std::size_t off = 0; off + cfg.frame_size <= x.size(); off += cfg.hop_size) {
    for (auto c : frame_candidates(x.subspan(off, cfg.frame_size), cfg)) {
      c.position += off;
      all.push_back(c);
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const ClickCandidate& a, const ClickCandidate& b) { return a.position < b.position; });
  return all;
}

Detection detections_at(std::span<const ClickCandidate> candidates, double threshold_db, int lpc_order) {
  Detection d;
  bool have_anchor = false;
  std::size_t anchor = 0;
  for (const auto& c : candidates) {
    if (!(c.level_db > threshold_db)) continue;
    if (have_anchor && c.position <= anchor + static_cast<std::size_t>(lpc_order)) continue;
    anchor = c.position;
    have_anchor = true;
    d.positions.push_back(c.position);
    d.target[std::min(c.position / kSamplesPerTarget, kTargetLength - 1)] = 1.0f;
  }
  return d;
}

Detection detect_clicks_segment(const Segment& s, const BaselineConfig& cfg) {
  return detections_at(segment_candidates(s, cfg), cfg.detection_threshold_db, cfg.lpc_order);
}

SweepResult threshold_sweep(const Dataset& dataset, std::span<const double> thresholds, const BaselineConfig& cfg,
                            int jobs) {
  cfg.validate();
  if (thresholds.empty()) throw UsageError("baseline", "no thresholds to sweep");
  SweepResult res;
  std::vector<ConfusionCounts> counts[2];
  std::vector<std::size_t>* detections[2] = {&res.validation_detections, &res.test_detections};
  const char* splits[2] = {"val", "test"};
  for (int s = 0; s < 2; ++s) {
    const auto& recs = dataset.records(splits[s]);
    if (recs.empty()) throw DataError("baseline", std::string("split ") + splits[s] + " of the dataset is empty");
    std::vector<std::vector<ClickCandidate>> cands(recs.size());
    parallel_for(recs.size(), jobs, [&](std::size_t i) { cands[i] = segment_candidates(dataset.load_segment(recs[i]), cfg); });
    counts[s].assign(thresholds.size(), {});
    detections[s]->assign(thresholds.size(), 0);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto d = detections_at(cands[i], thresholds[t], cfg.lpc_order);
        counts[s][t].add(d.target, recs[i].target);
        (*detections[s])[t] += d.positions.size();
      }
    }
  }
  double best = -1.0;
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    ThresholdRow row{thresholds[t], metrics_from_counts(counts[0][t]), metrics_from_counts(counts[1][t])};
    if (row.validation.accuracy > best) {
      best = row.validation.accuracy;
      res.selected_threshold = thresholds[t];
    }
    res.rows.push_back(row);
  }
  return res;
}

}  // namespace defectkit
