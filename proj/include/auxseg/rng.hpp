#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace auxseg {

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a parent seed and a stream label (FNV-1a over the label).
inline uint64_t derive_seed(uint64_t seed, std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(seed ^ mix64(h));
}

/// Explicit random stream. Every stochastic operation takes one by reference;
/// nothing in the library draws from hidden global state.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  Rng fork(std::string_view label) { return Rng(derive_seed(engine_(), label)); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return hi <= lo ? lo : std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean, double stddev) {
    return stddev <= 0.0 ? mean : std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [lo, hi].
  int64_t integer(int64_t lo, int64_t hi) {
    return std::uniform_int_distribution<int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return p > 0.0 && (p >= 1.0 || uniform() < p); }
  uint64_t next() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace auxseg
