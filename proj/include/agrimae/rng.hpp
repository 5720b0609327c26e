#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace agrimae {

// splitmix64; used to derive independent sub-stream seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Seeded RNG wrapper. Determinism is within-implementation only; masks and
// parameter draws are not required to be bit-portable across standard
// libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::mt19937_64& engine() { return engine_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  // Normal(0, stddev) resampled until within +/- 2 stddev.
  double trunc_normal(double stddev) {
    for (;;) {
      const double z = normal(0.0, stddev);
      if (std::abs(z) <= 2.0 * stddev) return z;
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), engine_);
  }

  // Derived generator for a named sub-stream.
  Rng fork(std::uint64_t stream) {
    return Rng(mix_seed(engine_() ^ mix_seed(stream)));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace agrimae
