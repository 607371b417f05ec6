#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace patchformer {

// Seeded generator whose draw sequence is fixed by the seed alone. The
// distributions are implemented here rather than taken from <random>, whose
// distribution algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p) { return uniform() < p; }
  // Uniform integer on [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  // Independent stream derived from this generator's seed and a stream id.
  Rng fork(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer, used to decorrelate derived seeds.
std::uint64_t mix_seed(std::uint64_t value);

}  // namespace patchformer
