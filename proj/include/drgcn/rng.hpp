#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace drgcn {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// FNV-1a over bytes; stable across platforms and runs (unlike std::hash).
constexpr std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Counter-based generator "ctr-splitmix64", version 1.
///
/// Output i of a stream is mix64(key + (i + 1) * golden_gamma), so the stream
/// is a pure function of (key, i) and bit-identical on every platform. All
/// derived quantities (uniform doubles, bounded integers, Bernoulli draws) are
/// computed with integer arithmetic or exact power-of-two scaling; no
/// implementation-defined std:: distributions are involved.
///
/// split() derives an independent child stream from the key alone, so a child
/// does not depend on how many values the parent has already produced.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "ctr-splitmix64";
  static constexpr int kVersion = 1;

  explicit Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x5851F42D4C957F2DULL)) {}

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * kGamma);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n); n must be positive. Lemire's rejection method.
  std::uint64_t below(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  Rng split(std::uint64_t tag) const {
    Rng child(0);
    child.key_ = mix64(key_ ^ mix64(tag + kGamma));
    return child;
  }
  Rng split(std::string_view tag) const { return split(stable_hash(tag)); }

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t position() const { return counter_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline std::uint64_t Rng::below(std::uint64_t n) {
  // 128-bit multiply-shift with rejection of the biased low region.
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(next_u64()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

}  // namespace drgcn
