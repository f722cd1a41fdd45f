// SPDX-License-Identifier: Apache-2.0

#include "defectkit/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "defectkit/error.hpp"

namespace defectkit {

void ClickConfig::validate() const {
  if (!(p_click >= 0.0 && p_click <= 1.0)) throw UsageError("synth", "p_click must lie in [0, 1]");
  if (!(min_offset > 0.0 && min_offset < max_offset && max_offset <= 1.0)) {
    throw UsageError("synth", "click offsets must satisfy 0 < min_offset < max_offset <= 1");
  }
  if (min_len < 1 || max_len < min_len || static_cast<std::size_t>(max_len) > kSegmentLength) {
    throw UsageError("synth", "click lengths must satisfy 1 <= min_len <= max_len");
  }
}

namespace {

bool clips(std::span<const float> x, std::size_t pos, int len, double offset, int sign) {
  for (int i = 0; i < len; ++i) {
    const float y = x[pos + i] + static_cast<float>(sign * offset);
    if (std::fabs(y) > 1.0f) return true;
  }
  return false;
}

}  // namespace

ClickInsertion apply_click(const Segment& s, std::size_t position, int length, double offset, int sign) {
  ClickInsertion out{s, std::nullopt};
  const auto x = s.samples();
  if (position + static_cast<std::size_t>(length) > x.size()) {
    throw UsageError("synth", "click does not fit inside the segment");
  }
  if (clips(x, position, length, offset, sign)) {
    sign = -sign;
    if (clips(x, position, length, offset, sign)) return out;
  }
  auto y = out.segment.samples();
  for (int i = 0; i < length; ++i) y[position + i] = x[position + i] + static_cast<float>(sign * offset);
  out.event = ClickEvent{position, length, offset, sign};
  return out;
}

ClickInsertion insert_click(const Segment& s, const ClickConfig& cfg, Rng& rng) {
  if (!rng.bernoulli(cfg.p_click)) return {s, std::nullopt};
  const int length = static_cast<int>(rng.uniform_int(cfg.min_len, cfg.max_len));
  const auto position = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(kSegmentLength) - length));
  const double offset = rng.uniform(cfg.min_offset, cfg.max_offset);
  const int sign = rng.bernoulli(0.5) ? 1 : -1;
  return apply_click(s, position, length, offset, sign);
}

TargetVector click_target(const std::optional<ClickEvent>& e) {
  TargetVector t{};
  if (!e) return t;
  for (int i = 0; i < e->length; ++i) t[(e->position + i) / kSamplesPerTarget] = 1.0f;
  return t;
}

void GlitchTargetConfig::validate() const {
  if (!(threshold_tau > 0.0)) throw UsageError("synth", "threshold_tau must be positive");
  if (!(epsilon_floor > 0.0)) throw UsageError("synth", "epsilon_floor must be positive");
}

std::vector<double> log_spectral_distance(const Segment& clean, const Segment& degraded, double eps) {
  const auto pc = power_spectrogram(clean);
  const auto pd = power_spectrogram(degraded);
  std::vector<double> d(pc.frame_count);
  for (std::size_t f = 0; f < pc.frame_count; ++f) {
    const auto a = pc.frame(f);
    const auto b = pd.frame(f);
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double diff = std::log(b[k] + eps) - std::log(a[k] + eps);
      acc += diff * diff;
    }
    d[f] = std::sqrt(acc / static_cast<double>(a.size()));
  }
  return d;
}

TargetVector glitch_target(const Segment& clean, const Segment& degraded, const GlitchTargetConfig& cfg) {
  cfg.validate();
  if (clean.offset_samples() != degraded.offset_samples()) {
    throw DataError("synth", "glitch_target inputs are misaligned (offsets " +
                                 std::to_string(clean.offset_samples()) + " vs " +
                                 std::to_string(degraded.offset_samples()) + ")");
  }
  const auto d = log_spectral_distance(clean, degraded, cfg.epsilon_floor);
  TargetVector t{};
  for (std::size_t f = 0; f < t.size() && f < d.size(); ++f) t[f] = d[f] > cfg.threshold_tau ? 1.0f : 0.0f;
  return t;
}

void PostProcessSpec::validate() const {
  auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  if (!in(reverb_amount, 0.0, 25.0)) throw UsageError("synth", "reverb_amount outside [0, 25]");
  for (const auto& b : {eq_band1, eq_band2}) {
    if (!in(b.centre_hz, 200.0, 8000.0) || !in(b.gain_db, -3.0, 3.0)) {
      throw UsageError("synth", "EQ band outside [200, 8000] Hz / [-3, 3] dB");
    }
  }
  if (!in(compand_ratio, 1.0, 2.0)) throw UsageError("synth", "compand_ratio outside [1, 2]");
}

PostProcessSpec draw_postprocess_spec(Rng& rng) {
  PostProcessSpec p;
  p.rng_seed = rng.next_u64();
  p.reverb_enabled = rng.bernoulli(0.5);
  p.reverb_amount = rng.uniform(0.0, 25.0);
  p.eq_enabled = rng.bernoulli(0.5);
  for (EqBand* b : {&p.eq_band1, &p.eq_band2}) {
    b->centre_hz = std::exp(rng.uniform(std::log(200.0), std::log(8000.0)));
    b->gain_db = rng.uniform(-3.0, 3.0);
  }
  p.compand_enabled = rng.bernoulli(0.5);
  p.compand_ratio = rng.uniform(1.0, 2.0);
  return p;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Compander knee at -10 dB; above it the level grows at 1/ratio.
double compand_top(double ratio) { return -10.0 + 10.0 / ratio; }

}  // namespace

std::vector<std::string> render_effects(const PostProcessSpec& p, EffectDialect dialect) {
  std::vector<std::string> args;
  if (dialect == EffectDialect::Ffmpeg) {
    std::vector<std::string> filters;
    if (p.reverb_enabled) {
      const double a = p.reverb_amount / 100.0;
      filters.push_back("aecho=1:1:23|37|53:" + fmt(0.6 * a) + "|" + fmt(0.45 * a) + "|" + fmt(0.3 * a));
    }
    if (p.eq_enabled) {
      for (const auto& b : {p.eq_band1, p.eq_band2}) {
        filters.push_back("equalizer=f=" + fmt(b.centre_hz) + ":t=q:w=1:g=" + fmt(b.gain_db));
      }
    }
    if (p.compand_enabled) {
      filters.push_back("compand=attacks=0.005:decays=0.1:points=-90/-90|-10/-10|0/" +
                        fmt(compand_top(p.compand_ratio)));
    }
    if (filters.empty()) filters.push_back("anull");
    std::string chain;
    for (const auto& f : filters) chain += (chain.empty() ? "" : ",") + f;
    args.push_back(chain);
  } else {
    if (p.reverb_enabled) args.insert(args.end(), {"reverb", fmt(p.reverb_amount)});
    if (p.eq_enabled) {
      for (const auto& b : {p.eq_band1, p.eq_band2}) {
        args.insert(args.end(), {"equalizer", fmt(b.centre_hz), "1q", fmt(b.gain_db)});
      }
    }
    if (p.compand_enabled) {
      args.insert(args.end(), {"compand", "0.005,0.1", "-90,-90,-10,-10,0," + fmt(compand_top(p.compand_ratio)), "0"});
    }
  }
  return args;
}

Segment CommandPostProcessor::process(const Segment& s, const PostProcessSpec& spec) const {
  TempDir dir("defectkit-post");
  const auto in = dir.path() / "in.wav";
  const auto out = dir.path() / "out.wav";
  Waveform w;
  w.samples.assign(s.samples().begin(), s.samples().end());
  write_audio(w, in, SampleFormat::Float32);
  const auto r = run_process(cfg_.command.expand(
      {{"in", {in.string()}}, {"out", {out.string()}}, {"effects", render_effects(spec, dialect_)}}));
  if (r.exit_status != 0) {
    throw AdapterError("synth", "post-processor exited with status " + std::to_string(r.exit_status) +
                                    ": " + r.stderr_text);
  }
  auto processed = mixdown_mono(read_audio(out));
  if (processed.samples.empty()) throw DataError("synth", "post-processor produced no audio");
  processed.samples.resize(kSegmentLength, 0.0f);
  float peak = 0.0f;
  for (float v : processed.samples) peak = std::max(peak, std::fabs(v));
  if (peak > 1.0f) {
    for (float& v : processed.samples) v = std::clamp(v / peak, -1.0f, 1.0f);
  }
  return Segment(std::move(processed.samples), s.source_id(), s.offset_samples());
}

Segment postprocess(const Segment& s, const PostProcessSpec& spec, const PostProcessor& tool) {
  spec.validate();
  return tool.process(s, spec);
}

nlohmann::json to_json(const ClickEvent& e) {
  return {{"position", e.position}, {"length", e.length}, {"offset", e.offset}, {"sign", e.sign}};
}

nlohmann::json to_json(const ClickConfig& c) {
  return {{"p_click", c.p_click}, {"min_offset", c.min_offset}, {"max_offset", c.max_offset},
          {"min_len", c.min_len}, {"max_len", c.max_len},       {"rng_seed", c.rng_seed}};
}

nlohmann::json to_json(const PostProcessSpec& p) {
  return {{"reverb_enabled", p.reverb_enabled},
          {"reverb_amount", p.reverb_amount},
          {"eq_enabled", p.eq_enabled},
          {"eq_band1", {{"centre_hz", p.eq_band1.centre_hz}, {"gain_db", p.eq_band1.gain_db}}},
          {"eq_band2", {{"centre_hz", p.eq_band2.centre_hz}, {"gain_db", p.eq_band2.gain_db}}},
          {"compand_enabled", p.compand_enabled},
          {"compand_ratio", p.compand_ratio},
          {"rng_seed", p.rng_seed}};
}

nlohmann::json to_json(const GlitchTargetConfig& g) {
  return {{"threshold_tau", g.threshold_tau}, {"epsilon_floor", g.epsilon_floor}};
}

ClickEvent click_event_from_json(const nlohmann::json& j) {
  return {j.at("position").get<std::size_t>(), j.at("length").get<int>(), j.at("offset").get<double>(),
          j.at("sign").get<int>()};
}

PostProcessSpec postprocess_spec_from_json(const nlohmann::json& j) {
  PostProcessSpec p;
  p.reverb_enabled = j.at("reverb_enabled").get<bool>();
  p.reverb_amount = j.at("reverb_amount").get<double>();
  p.eq_enabled = j.at("eq_enabled").get<bool>();
  p.eq_band1 = {j.at("eq_band1").at("centre_hz").get<double>(), j.at("eq_band1").at("gain_db").get<double>()};
  p.eq_band2 = {j.at("eq_band2").at("centre_hz").get<double>(), j.at("eq_band2").at("gain_db").get<double>()};
  p.compand_enabled = j.at("compand_enabled").get<bool>();
  p.compand_ratio = j.at("compand_ratio").get<double>();
  p.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return p;
}

}  // namespace defectkit
