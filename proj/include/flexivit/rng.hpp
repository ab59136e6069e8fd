#pragma once

#include <cstdint>
#include <span>

namespace flexivit {

// Counter-based random generator. Every draw is a pure function of
// (seed, stream, counter), so independent streams can be forked for
// parallel work without order-dependent results. The mixing function
// is SplitMix64 (Steele et al.), applied as a hash of the counter.
class Rng {
public:
  Rng(std::uint64_t seed, std::uint64_t stream = 0);

  // Derives an independent stream; the parent is not advanced.
  Rng fork(std::uint64_t tag) const;

  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  double normal();                        // standard normal, Box-Muller
  double truncated_normal(double sigma);  // resamples outside +/- 2 sigma
  // Index into `weights` drawn proportionally to weight. Weights must be
  // nonnegative with a positive sum.
  int weighted_index(std::span<const double> weights);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  static std::uint64_t mix(std::uint64_t x);

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace flexivit
