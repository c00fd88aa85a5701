#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <vector>

#include "tshift/rng.hpp"

using namespace tshift;

TEST_CASE("rng streams are deterministic and seed-sensitive") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 100; ++i) differs |= (a2.next_u64() != c.next_u64());
  REQUIRE(differs);
}

TEST_CASE("derive_seed separates substreams") {
  REQUIRE(derive_seed(1, 0) != derive_seed(1, 1));
  REQUIRE(derive_seed(1, 0) != derive_seed(2, 0));
  REQUIRE(derive_seed(7, 5) == derive_seed(7, 5));
}

TEST_CASE("uniform_below stays in range and covers values") {
  Rng rng(7);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) {
    const auto v = rng.uniform_below(10);
    REQUIRE(v < 10);
    ++counts[static_cast<std::size_t>(v)];
  }
  for (int c : counts) REQUIRE(c > 800);
}

TEST_CASE("normal draws have roughly the right moments") {
  Rng rng(11);
  double sum = 0, sumsq = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(2.0, 3.0);
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  REQUIRE(std::abs(mean - 2.0) < 0.05);
  REQUIRE(std::abs(var - 9.0) < 0.3);
}

TEST_CASE("shuffle is a permutation and deterministic per seed") {
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  Rng r1(5), r2(5);
  r1.shuffle(v);
  r2.shuffle(w);
  REQUIRE(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) REQUIRE(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("stable_hash is stable across calls") {
  REQUIRE(stable_hash("outcome_a|2017|population") == stable_hash("outcome_a|2017|population"));
  REQUIRE(stable_hash("a") != stable_hash("b"));
}
