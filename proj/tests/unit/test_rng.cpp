#include <catch2/catch_amalgamated.hpp>

#include "leaffew/core/rng.hpp"

using leaffew::Rng;

TEST_CASE("rng streams are reproducible and seed-sensitive") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    REQUIRE(va == b.next_u64());
  }
  bool any_diff = false;
  Rng a2(42);
  for (int i = 0; i < 100; ++i)
    if (a2.next_u64() != c.next_u64()) any_diff = true;
  REQUIRE(any_diff);
}

TEST_CASE("next_below stays in range and covers values") {
  Rng rng(7);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) {
    const auto v = rng.next_below(10);
    REQUIRE(v < 10);
    ++counts[v];
  }
  for (int c : counts) REQUIRE(c > 800);
}

TEST_CASE("shuffle is a permutation") {
  Rng rng(3);
  std::vector<int> v{1, 2, 3, 4, 5, 6, 7};
  auto w = v;
  rng.shuffle(w);
  std::sort(w.begin(), w.end());
  REQUIRE(w == v);
}

TEST_CASE("normal variates have roughly the requested moments") {
  Rng rng(11);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(1.0, 2.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  REQUIRE(std::abs(mean - 1.0) < 0.05);
  REQUIRE(std::abs(var - 4.0) < 0.15);
}

TEST_CASE("hash_str separates labels") {
  REQUIRE(leaffew::hash_str(1, "a") != leaffew::hash_str(1, "b"));
  REQUIRE(leaffew::hash_str(1, "a") != leaffew::hash_str(2, "a"));
  REQUIRE(leaffew::hash_str(1, "a") == leaffew::hash_str(1, "a"));
}
