#pragma once

#include <cstdint>

namespace clinrisk {

/// Deterministic 64-bit PRNG (splitmix64 core with hand-rolled
/// distributions). The draw sequence depends only on the seed, never on
/// the standard library, so results are identical across platforms.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 bits of entropy.
  double uniform();

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n);

  /// Standard normal via Box-Muller (pairs are cached).
  double normal();

  /// Derive an independent stream from a parent seed and an index.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t index);

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace clinrisk
