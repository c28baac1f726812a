// Counter-based random streams: every draw is a pure function of
// (seed, stream, element, counter), so ensembles are reproducible
// bit-for-bit regardless of thread count or evaluation order.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace tilq {

/// SplitMix64 finalizer (xor-shift-multiply avalanche).
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

/// One logical random stream, addressed by (seed, stream, element); in the
/// simulators element is the path index and counter the step index.
struct CounterRng {
  std::uint64_t key = 0;

  CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t element) {
    key = mix64(mix64(seed + kGolden * (stream + 1)) + kGolden * (element + 1));
  }

  std::uint64_t bits(std::uint64_t counter) const { return mix64(key + kGolden * (counter + 1)); }

  /// Uniform draw in the open interval (0, 1).
  double uniform(std::uint64_t counter) const {
    std::uint64_t z = bits(counter) >> 11;  // top 53 bits
    if (z == 0) z = 1;
    return static_cast<double>(z) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (cosine branch); consumes the uniform
  /// counters 2c and 2c + 1.
  double normal(std::uint64_t counter) const {
    double u1 = uniform(2 * counter);
    double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
};

}  // namespace tilq
