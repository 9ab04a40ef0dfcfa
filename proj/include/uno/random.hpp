#pragma once

// Seeded random streams. Every consumer derives its own stream from a base
// seed and a counter, so results never depend on evaluation order.

#include <cstdint>
#include <random>

namespace uno {

/// SplitMix64 finalizer; bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

/// Seed of counter `index` under `seed`, for consumers that take a seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Independent stream number `index` under `seed`.
inline Rng stream(std::uint64_t seed, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, index));
}

}  // namespace uno
