#pragma once

#include <cstdint>

namespace mafaseg {

/// xoshiro256** seeded through SplitMix64. All randomness in the library goes
/// through this generator so datasets and training runs reproduce across
/// compilers and platforms; the std:: distributions are implementation defined
/// and are never used.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  /// Independent stream derived from this generator's seed and a key.
  static Rng derive(std::uint64_t seed, std::uint64_t key);

 private:
  std::uint64_t s_[4]{};
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace mafaseg
