// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include "selectkd/types.hpp"

namespace selectkd {

// SplitMix64 mixing step; used to derive child-stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seedable, splittable random stream.
///
/// All draws are derived from raw 64-bit engine output with fixed arithmetic,
/// so a given seed replays the identical sequence on any platform (the
/// std::*_distribution adaptors are implementation-defined and not used).
/// split(key) derives an independent stream from the parent seed and the key;
/// it does not consume or depend on the parent's draw position.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  Scalar uniform() { return static_cast<Scalar>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);

  /// Standard normal draw (Box-Muller, spare value cached).
  Scalar normal();

  /// Gamma(shape, 1) draw, shape > 0 (Marsaglia-Tsang).
  Scalar gamma(Scalar shape);

  /// Symmetric Dirichlet(concentration) draw of the given dimension.
  Vec dirichlet(Scalar concentration, Index dim);

  /// Independent child stream keyed off this stream's seed.
  Rng split(std::uint64_t key) const {
    return Rng(splitmix64(seed_ ^ splitmix64(key ^ 0xD1B54A32D192ED03ULL)));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  Scalar spare_normal_ = 0.0;
};

}  // namespace selectkd
