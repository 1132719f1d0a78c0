#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace folk {

// Seeded random source. Every stochastic operation takes one of these by
// reference; nothing in the library touches a global generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent stream keyed by (seed, keys...). Used to give every
  // (epoch, sample, view) its own generator so data order does not leak
  // into unrelated samples.
  static Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p);
  std::size_t index(std::size_t n);       // uniform in [0, n)
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Seed drawn from system entropy, for runs without an explicit seed.
std::uint64_t entropy_seed();

}  // namespace folk
