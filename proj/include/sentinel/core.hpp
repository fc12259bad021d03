#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sentinel {

/// Input or configuration rejected before any work started. CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while doing the work (I/O, codec, numerics). CLI exit code 3.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic counter-free pseudo-random stream (splitmix64 core).
/// Produces identical sequences on every platform, unlike the standard
/// library distributions, so a stored seed fully pins a run.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) {
    return lo + static_cast<float>(unit()) * (hi - lo);
  }

  /// Uniform integer in [0, n). n must be positive.
  int below(int n) {
    return static_cast<int>((static_cast<__uint128_t>(next_u64()) *
                             static_cast<uint64_t>(n)) >> 64);
  }

  bool flip(double p) { return unit() < p; }

  /// Standard normal via Box-Muller; always consumes exactly two draws.
  float gaussian() {
    double u1 = 1.0 - unit();  // (0, 1]
    double u2 = unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    return static_cast<float>(r * std::cos(6.283185307179586 * u2));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

/// Order-free combination of seed material for derived streams.
inline uint64_t mix64(uint64_t a, uint64_t b) {
  a += 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
  a = (a ^ (a >> 30)) * 0xbf58476d1ce4e5b9ull;
  a = (a ^ (a >> 27)) * 0x94d049bb133111ebull;
  return a ^ (a >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) {
  return mix64(mix64(a, b), c);
}

/// Runs fn(i) for i in [0, n). Worker count adapts to the machine; every
/// index is independent, so results must be written to per-index slots.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace sentinel
