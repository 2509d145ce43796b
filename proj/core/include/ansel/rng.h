#ifndef ANSEL_RNG_H_
#define ANSEL_RNG_H_

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace ansel {

// Seeded pseudo-random source. The standard distributions are
// implementation-defined, so the few we need are derived directly from the
// engine's 64-bit output; a given seed yields the same stream on every
// platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller.
  double normal();

  // Normal(0, stddev) resampled until it lies within +-2 stddev.
  double truncated_normal(double stddev);

  // k distinct indices from [0, n), in sampling order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  // Derives an independent child seed; used to partition a run seed.
  std::uint64_t fork() { return engine_() ^ 0x9E3779B97F4A7C15ULL; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ansel

#endif  // ANSEL_RNG_H_
