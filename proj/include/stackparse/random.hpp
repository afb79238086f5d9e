#pragma once

#include <cstdint>
#include <random>

namespace stackparse {

// Portable seeded generator. std::mt19937_64 is fully specified by the
// standard; the distribution helpers below avoid the implementation-defined
// std::*_distribution classes so outputs match across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n).
  std::uint64_t uniformInt(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  int uniformInt(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(uniformInt(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

// splitmix64 finalizer; used to derive independent sub-seeds.
inline std::uint64_t mixSeed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t deriveSeed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mixSeed(mixSeed(mixSeed(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

}  // namespace stackparse
