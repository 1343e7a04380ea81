#pragma once

#include <cstdint>

namespace fleet {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// SplitMix64. Every random decision in training and splitting draws from
/// this generator so that independent implementations agree bit-for-bit.
class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    state_ += kGoldenGamma;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform-ish index in [0, bound) by plain modulo; the bias is part of the
  // reproducible contract.
  constexpr std::uint64_t below(std::uint64_t bound) { return next() % bound; }

  constexpr std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// One SplitMix64 step seeded with a ^ (b * gamma).
constexpr std::uint64_t splitmix64_mix(std::uint64_t a, std::uint64_t b) {
  Rng r(a ^ (b * kGoldenGamma));
  return r.next();
}

}  // namespace fleet
