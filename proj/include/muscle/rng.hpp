#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace muscle {

/// Counter-free splitmix64 generator. One u64 of state, so it can be
/// checkpointed verbatim and split into independent streams by hashing.
/// Every stochastic component derives its stream from (seed, purpose, ...)
/// so the draws a variant consumes do not depend on which losses are active.
struct Rng {
  uint64_t state = 0;

  Rng() = default;
  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next_u64() {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0,1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (sine branch discarded).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n). n must be positive.
  int below(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  bool coin(double p) { return uniform() < p; }
};

/// Order-sensitive hash combine for deriving stream seeds.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
  return mix_seed(mix_seed(a, b, c), d);
}

/// First `count` entries of a seeded Fisher-Yates shuffle of pool.
/// The pool is taken by value; draws are without replacement.
inline std::vector<int> sample_without_replacement(std::vector<int> pool, int count, Rng& rng) {
  std::vector<int> out;
  out.reserve(static_cast<size_t>(count));
  int n = static_cast<int>(pool.size());
  for (int i = 0; i < count; ++i) {
    int j = i + rng.below(n - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    out.push_back(pool[static_cast<size_t>(i)]);
  }
  return out;
}

}  // namespace muscle
