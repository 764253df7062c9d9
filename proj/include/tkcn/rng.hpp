#pragma once

#include <cstdint>

namespace tkcn {

/// Counter-based generator: the i-th draw is splitmix64(seed + i * golden).
/// Normals use the cosine branch of Box-Muller, one normal per two uniforms:
///   z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer uniform in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Independent stream derived from this generator's seed and a stream id.
  Rng split(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace tkcn
