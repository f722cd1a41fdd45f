// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <set>

#include <nlohmann/json.hpp>

#include "defectkit/synth.hpp"
#include "helpers.hpp"

using namespace defectkit;

namespace {

Segment silence() { return Segment(std::vector<float>(kSegmentLength, 0.0f)); }

double rms(std::span<const float> x) {
  double acc = 0.0;
  for (float v : x) acc += double(v) * v;
  return std::sqrt(acc / x.size());
}

std::set<std::size_t> flagged(const TargetVector& t) {
  std::set<std::size_t> out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == 1.0f) out.insert(i);
  }
  return out;
}

bool have_ffmpeg() {
  const char* p = std::getenv("DEFECTKIT_FFMPEG");
  return p && *p;
}

}  // namespace

TEST_CASE("click: additive offset on silence") {
  const auto r = apply_click(silence(), 100, 1, 0.5, +1);
  REQUIRE(r.event);
  const auto y = r.segment.samples();
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == (i == 100 ? 0.5f : 0.0f));
  CHECK(r.event->sign == 1);
}

TEST_CASE("click: clipping inverts the sign for the whole event") {
  std::vector<float> x(kSegmentLength, 0.0f);
  x[200] = 0.9f;
  x[201] = 0.1f;
  const auto r = apply_click(Segment(x), 200, 2, 0.4, +1);
  REQUIRE(r.event);
  CHECK(r.event->sign == -1);
  CHECK(r.segment.samples()[200] == doctest::Approx(0.5));
  CHECK(r.segment.samples()[201] == doctest::Approx(-0.3));

  // Opposite-signed neighbours clip in both directions: nothing is inserted.
  x[201] = -0.9f;
  const auto none = apply_click(Segment(x), 200, 2, 0.5, +1);
  CHECK_FALSE(none.event);
  CHECK(std::equal(x.begin(), x.end(), none.segment.samples().begin()));
}

TEST_CASE("click: insertion statistics on a sine carrier") {
  const auto carrier = testutil::sine_segment(0.9);
  ClickConfig cfg;
  Rng rng(2024);
  const std::size_t n = 20000;
  std::size_t events = 0;
  std::vector<double> offsets;
  for (std::size_t s = 0; s < n; ++s) {
    const auto r = insert_click(carrier, cfg, rng);
    const auto x = carrier.samples(), y = r.segment.samples();
    std::size_t first = y.size(), last = 0, changed = 0;
    bool in_range = true;
    for (std::size_t i = 0; i < y.size(); ++i) {
      in_range &= std::fabs(y[i]) <= 1.0f;
      if (y[i] != x[i]) {
        ++changed;
        first = std::min(first, i);
        last = i;
      }
    }
    REQUIRE(in_range);
    REQUIRE(changed <= 3);
    if (!r.event) {
      REQUIRE(changed == 0);
      continue;
    }
    ++events;
    offsets.push_back(r.event->offset);
    REQUIRE(r.event->length >= 1);
    REQUIRE(r.event->length <= 3);
    REQUIRE(r.event->position + r.event->length <= kSegmentLength);
    REQUIRE(changed == static_cast<std::size_t>(r.event->length));
    REQUIRE(last - first + 1 == changed);
    REQUIRE(first == r.event->position);
  }
  const double sigma = std::sqrt(n * 0.1 * 0.9);
  CHECK(std::fabs(double(events) - 0.1 * n) <= 3.0 * sigma);
  CHECK(testutil::ks_uniform_statistic(offsets, 0.3, 1.0) < testutil::ks_critical_001(offsets.size()));
}

TEST_CASE("click: configuration validation") {
  ClickConfig c;
  CHECK_NOTHROW(c.validate());
  c.p_click = 1.5;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = ClickConfig{};
  c.min_offset = 0.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = ClickConfig{};
  c.max_len = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("click target: resampled positions") {
  CHECK(flagged(click_target(std::nullopt)).empty());
  CHECK(flagged(click_target(ClickEvent{5000, 1, 0.5, 1})) == std::set<std::size_t>{39});
  CHECK(flagged(click_target(ClickEvent{16381, 3, 0.5, 1})) == std::set<std::size_t>{127});
  CHECK(flagged(click_target(ClickEvent{127, 2, 0.5, 1})) == std::set<std::size_t>{0, 1});
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const int len = static_cast<int>(rng.uniform_int(1, 3));
    const auto pos = static_cast<std::size_t>(rng.uniform_int(0, kSegmentLength - len));
    const auto f = flagged(click_target(ClickEvent{pos, len, 0.5, 1}));
    REQUIRE((f.size() == 1 || f.size() == 2));
    REQUIRE(f.count(pos / kSamplesPerTarget) == 1);
  }
}

TEST_CASE("glitch target: identical audio is never flagged") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Segment s(testutil::white_noise(kSegmentLength, 0.1 * (seed + 1), seed));
    CHECK(flagged(glitch_target(s, s, {})).empty());
  }
  CHECK(flagged(glitch_target(silence(), silence(), {})).empty());
}

TEST_CASE("glitch target: a noise burst flags exactly the frames whose windows touch it") {
  // Burst edges sit on window boundaries, so every frame overlaps it by either
  // zero or at least half a window.
  const std::size_t begin = 40 * 128 - 64, end = 60 * 128 + 192;
  std::vector<float> noisy(kSegmentLength, 0.0f);
  Rng rng(17);
  for (std::size_t i = begin; i < end; ++i) noisy[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  const auto t = glitch_target(silence(), Segment(noisy), {});

  std::set<std::size_t> expected;
  for (std::size_t f = 0; f < kTargetLength; ++f) {
    const std::int64_t lo = 128 * std::int64_t(f) - 64, hi = lo + 256;
    if (lo < std::int64_t(end) && hi > std::int64_t(begin)) expected.insert(f);
  }
  CHECK(expected.size() == 23);
  CHECK(*expected.begin() == 39);
  CHECK(flagged(t) == expected);
}

TEST_CASE("glitch target: flagged set shrinks as the threshold rises") {
  const Segment clean(testutil::white_noise(kSegmentLength, 0.2, 1));
  auto y = testutil::white_noise(kSegmentLength, 0.2, 1);
  Rng rng(3);
  for (int burst = 0; burst < 12; ++burst) {
    const auto at = static_cast<std::size_t>(rng.uniform_int(0, kSegmentLength - 400));
    const double gain = rng.uniform(0.0, 1.0);
    for (std::size_t i = at; i < at + 400; ++i) y[i] = static_cast<float>(y[i] * gain);
  }
  const Segment degraded(y);
  std::set<std::size_t> prev;
  bool first = true;
  for (double tau : {0.01, 0.1, 0.3, 0.5, 1.0, 2.0, 4.0}) {
    const auto cur = flagged(glitch_target(clean, degraded, {tau, 1e-6}));
    if (!first) CHECK(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
    prev = cur;
    first = false;
  }
  CHECK_THROWS_AS(glitch_target(clean, degraded, {0.0, 1e-6}), UsageError);
  CHECK_THROWS_AS(glitch_target(clean, Segment(y, "x", 16384), {}), DataError);
}

TEST_CASE("post-processing: drawn specs stay mild and centres are log-uniform") {
  Rng rng(4);
  double log_centre = 0.0;
  int enabled[3] = {};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto p = draw_postprocess_spec(rng);
    REQUIRE_NOTHROW(p.validate());
    log_centre += std::log(p.eq_band1.centre_hz);
    enabled[0] += p.reverb_enabled;
    enabled[1] += p.eq_enabled;
    enabled[2] += p.compand_enabled;
    const auto back = postprocess_spec_from_json(to_json(p));
    REQUIRE(back.eq_band2.centre_hz == p.eq_band2.centre_hz);
    REQUIRE(back.rng_seed == p.rng_seed);
  }
  const double mid = 0.5 * (std::log(200.0) + std::log(8000.0));
  const double se = (std::log(8000.0) - std::log(200.0)) / std::sqrt(12.0 * n);
  CHECK(std::fabs(log_centre / n - mid) < 4.0 * se);
  for (int e : enabled) CHECK(std::abs(e - n / 2) < 4.0 * std::sqrt(n * 0.25));
}

TEST_CASE("post-processing: effect rendering") {
  PostProcessSpec off;
  CHECK(render_effects(off, EffectDialect::Ffmpeg) == std::vector<std::string>{"anull"});
  CHECK(render_effects(off, EffectDialect::Sox).empty());
  PostProcessSpec on;
  on.reverb_enabled = on.eq_enabled = on.compand_enabled = true;
  on.reverb_amount = 10.0;
  on.compand_ratio = 2.0;
  const auto ff = render_effects(on, EffectDialect::Ffmpeg);
  REQUIRE(ff.size() == 1);
  CHECK(ff[0].find("aecho=") == 0);
  CHECK(ff[0].find("compand=") != std::string::npos);
  CHECK(ff[0].find("0/-5.000") != std::string::npos);
  const auto sox = render_effects(on, EffectDialect::Sox);
  CHECK(sox.front() == "reverb");
  CHECK(std::count(sox.begin(), sox.end(), "equalizer") == 2);
  on.reverb_amount = 30.0;
  CHECK_THROWS_AS(on.validate(), UsageError);
}

TEST_CASE("post-processing through ffmpeg: identity, flat EQ and mild levels") {
  if (!have_ffmpeg()) {
    MESSAGE("DEFECTKIT_FFMPEG not set; skipping");
    return;
  }
  const CommandPostProcessor tool(default_postprocessor(), EffectDialect::Ffmpeg);
  const auto carrier = testutil::sine_segment();
  const Segment seg(std::vector<float>(carrier.samples().begin(), carrier.samples().end()), "p", 16384);

  const auto same = postprocess(seg, PostProcessSpec{}, tool);
  CHECK(same.offset_samples() == 16384);
  CHECK(same.source_id() == "p");
  REQUIRE(same.samples().size() == kSegmentLength);
  double worst = 0.0;
  for (std::size_t i = 0; i < kSegmentLength; ++i) {
    worst = std::max(worst, std::fabs(double(same.samples()[i]) - seg.samples()[i]));
  }
  CHECK(worst <= std::ldexp(1.0, -15));

  PostProcessSpec flat;
  flat.eq_enabled = true;
  const auto eq = postprocess(seg, flat, tool);
  CHECK(std::fabs(20.0 * std::log10(rms(eq.samples()) / rms(seg.samples()))) < 0.1);

  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    const auto spec = draw_postprocess_spec(rng);
    const auto out = postprocess(seg, spec, tool);
    REQUIRE(out.samples().size() == kSegmentLength);
    CHECK(std::all_of(out.samples().begin(), out.samples().end(), [](float v) { return std::fabs(v) <= 1.0f; }));
    CHECK(std::fabs(20.0 * std::log10(rms(out.samples()) / rms(seg.samples()))) < 6.0);
  }
}
