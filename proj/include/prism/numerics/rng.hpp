#pragma once

#include <cstdint>
#include <random>

namespace prism::num {

// Independent randomness sources derived from one run seed.
enum class SeedStream : std::uint64_t {
  init = 1,
  batching = 2,
  masking = 3,
  dropout = 4,
  synthetic = 5,
};

/// splitmix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based split: the seed for (base, stream, index) is a fixed function of all three.
constexpr std::uint64_t derive_seed(std::uint64_t base, SeedStream stream, std::uint64_t index = 0) noexcept {
  return mix64(mix64(mix64(base) ^ static_cast<std::uint64_t>(stream)) + index);
}

inline std::mt19937_64 make_rng(std::uint64_t base, SeedStream stream, std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(base, stream, index));
}

/// Uniform double in [0, 1) with 53 random bits; identical across standard libraries.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n) by rejection, identical across standard libraries.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Standard normal draw (Box-Muller, one value per call).
double standard_normal(std::mt19937_64& rng);

}  // namespace prism::num
