#pragma once

#include <cstdint>
#include <limits>

namespace mdn {

// Counter-based generator: the n-th output is a pure function of (key, n), so
// streams can be split deterministically and replayed from any position.
// Every random decision in the toolkit derives from one user seed through
// Rng(seed).split(...) chains.
class Rng {
 public:
  using result_type = uint64_t;

  explicit Rng(uint64_t seed = 0, uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  // Independent child stream; does not advance this generator.
  Rng split(uint64_t stream) const;

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi].
  int64_t uniform_int(int64_t lo, int64_t hi);
  double normal();
  double exponential(double mean);
  // Inversion below lambda = 30, PTRS transformed rejection above.
  int64_t poisson(double lambda);

  uint64_t key() const { return key_; }
  uint64_t counter() const { return counter_; }
  static Rng restore(uint64_t key, uint64_t counter);

 private:
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

uint64_t mix64(uint64_t x);
uint64_t combine_seed(uint64_t seed, uint64_t index);

}  // namespace mdn
