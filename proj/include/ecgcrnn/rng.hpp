#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ecgcrnn {

/// splitmix64 finalizer, used to derive independent seeds from counters.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Deterministic generator. The engine is std::mt19937_64 (its output
/// sequence is fixed by the standard); the conversions to real and bounded
/// integer values are done here so results do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  /// Counter-based stream derivation: the same (seed, keys...) always yields
  /// the same stream regardless of how many other streams were created.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t k : keys) h = mix64(h ^ mix64(k + 0x632BE59BD9B4E019ull));
    return Rng(h);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on the closed interval [lo, hi].
  double uniform_closed(double lo, double hi) {
    const double u = static_cast<double>(next_u64() >> 11) / static_cast<double>((1ull << 53) - 1);
    return lo + (hi - lo) * u;
  }

  /// Uniform integer on {0, ..., max_inclusive}, unbiased by rejection.
  std::uint64_t uniform_int(std::uint64_t max_inclusive) {
    if (max_inclusive == ~0ull) return next_u64();
    const std::uint64_t range = max_inclusive + 1;
    const std::uint64_t limit = (~0ull) - ((~0ull) % range + 1) % range;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v > limit);
    return v % range;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ecgcrnn
