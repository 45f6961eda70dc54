#pragma once

#include <cstdint>
#include <random>

namespace laber {

using Rng = std::mt19937_64;

// Independent consumers of a run's root seed.
enum class SeedStream : std::uint32_t {
  env = 1,
  init = 2,
  sampler = 3,
  exploration = 4,
  evaluation = 5,
};

// Deterministically derives a per-consumer seed from a single 64-bit root.
inline std::uint64_t derive_seed(std::uint64_t root, SeedStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(root), static_cast<std::uint32_t>(root >> 32),
                    static_cast<std::uint32_t>(stream)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline Rng make_rng(std::uint64_t root, SeedStream stream) { return Rng(derive_seed(root, stream)); }

// Uniform draw in [0, 1).
inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace laber
