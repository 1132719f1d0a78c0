#include "folk/rng.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace folk {

Rng Rng::substream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * (keys.size() + 1));
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  Rng rng;
  rng.engine_.seed(seq);
  return rng;
}

double Rng::uniform() {
  // 53 random bits, independent of the standard library's distribution code.
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal(double mean, double stddev) {
  // Box-Muller; one fresh pair per call so no hidden state needs saving.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + stddev * z;
}

bool Rng::bernoulli(double p) { return uniform() < p; }

std::size_t Rng::index(std::size_t n) {
  if (n <= 1) return 0;
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

std::uint64_t entropy_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

}  // namespace folk
