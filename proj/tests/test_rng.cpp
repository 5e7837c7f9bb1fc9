#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "drgcn/rng.hpp"

using drgcn::Rng;

TEST_CASE("same seed gives an identical stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("stream values are pinned across platforms") {
  // The generator is a pure function of (seed, counter); these constants
  // detect any accidental change of the algorithm.
  Rng r(0);
  const std::uint64_t first = r.next_u64();
  const std::uint64_t key = drgcn::mix64(0 ^ 0x5851F42D4C957F2DULL);
  CHECK(first == drgcn::mix64(key + 0x9E3779B97F4A7C15ULL));
  CHECK(r.position() == 1);
}

TEST_CASE("uniform stays in range and has the right mean") {
  Rng r(7);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  // Standard error of the mean of U(0,1) is sqrt(1/12/n).
  CHECK(std::abs(sum / n - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("below is unbiased and bounded") {
  Rng r(11);
  std::vector<int> counts(6, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) {
    const auto v = r.below(6);
    REQUIRE(v < 6);
    ++counts[v];
  }
  for (int c : counts) CHECK(std::abs(c - n / 6) < 5 * std::sqrt(n / 6.0));
}

TEST_CASE("split streams are independent of parent consumption") {
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) a.next_u64();
  Rng ca = a.split("child");
  Rng cb = b.split("child");
  for (int i = 0; i < 100; ++i) CHECK(ca.next_u64() == cb.next_u64());
  Rng other = b.split("other");
  Rng again = b.split("child");
  CHECK(other.next_u64() != again.next_u64());
}

TEST_CASE("shuffle is a permutation and deterministic") {
  std::vector<int> v(50), w(50);
  for (int i = 0; i < 50; ++i) v[i] = w[i] = i;
  Rng a(3), b(3);
  a.shuffle(std::span<int>(v));
  b.shuffle(std::span<int>(w));
  CHECK(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("stable_hash is FNV-1a") {
  CHECK(drgcn::stable_hash("") == 0xCBF29CE484222325ULL);
  CHECK(drgcn::stable_hash("a") == 0xAF63DC4C8601EC8CULL);
}
