#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace bdsl {

// All randomness in the pipeline flows through this wrapper so that a seed
// fully determines every draw.  The raw engine is mt19937_64, but uniform and
// normal variates are generated here rather than with std::distributions,
// whose output is implementation-defined and would break cross-platform
// reproducibility of datasets, initializations, and augmentations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits, the full double mantissa.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection on the top of the 64-bit range.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    for (;;) {
      std::uint64_t v = engine_();
      if (v < limit) return v % n;
    }
  }

  int uniform_int(int lo, int hi) {  // inclusive range [lo, hi]
    return lo + static_cast<int>(uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Hot-loop form of bernoulli: precompute the integer threshold once, then
  // each call costs one engine draw and an integer compare.  The accept set is
  // identical to bernoulli(p), so the two forms produce the same stream.
  static std::uint64_t bernoulli_threshold(double p) {
    if (p <= 0.0) return 0;
    return static_cast<std::uint64_t>(std::ceil(std::ldexp(std::min(p, 1.0), 53)));
  }
  bool bernoulli_with(std::uint64_t threshold) { return (engine_() >> 11) < threshold; }

  // Box-Muller; the spare variate is cached, so draw parity matters for
  // reproducing a stream (every consumer owns its own Rng instance).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates, descending index, swap partner uniform over [0, i].
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// splitmix64-style mixer used to derive independent per-sample streams from
// (seed, epoch, index) without correlation between adjacent indices.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t x = a;
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  x = mix(x ^ mix(b));
  x = mix(x ^ mix(c + 0x632be59bd9b4e019ULL));
  return x;
}

}  // namespace bdsl
