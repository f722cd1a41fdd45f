// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "defectkit/rng.hpp"
#include "helpers.hpp"

using namespace defectkit;

TEST_CASE("rng: engine matches the standard's check value") {
  Rng rng(5489);
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = rng.next_u64();
  CHECK(v == 9981545732273789042ULL);
}

TEST_CASE("rng: derived seeds are distinct and stable") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(7, i));
  for (const char* name : {"split", "click", "postprocess", "shuffle"}) seen.insert(derive_seed(7, name));
  CHECK(seen.size() == 1004);
  CHECK(derive_seed(7, "split") == derive_seed(7, "split"));
  CHECK(derive_seed(7, "split") != derive_seed(8, "split"));
}

TEST_CASE("rng: draw ranges and moments") {
  Rng rng(3);
  const int n = 100000;
  std::vector<double> u;
  double sum = 0.0, sq = 0.0;
  int counts[3] = {};
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
    u.push_back(x);
    const auto k = rng.uniform_int(1, 3);
    REQUIRE(k >= 1);
    REQUIRE(k <= 3);
    ++counts[k - 1];
    const double z = rng.normal(120.0, 60.0);
    sum += z;
    sq += z * z;
  }
  CHECK(testutil::ks_uniform_statistic(u, 0.0, 1.0) < testutil::ks_critical_001(u.size()));
  for (int c : counts) CHECK(std::abs(c - n / 3) < 4.0 * std::sqrt(n * 2.0 / 9.0));
  const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::fabs(mean - 120.0) < 3.0 * 60.0 / std::sqrt(n));
  CHECK(sd == doctest::Approx(60.0).epsilon(0.02));
  CHECK(rng.uniform_int(5, 5) == 5);
}
