#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mmcaps {

// Deterministic RNG. mt19937_64 output is pinned by the standard; the
// distribution helpers below are hand-rolled because std:: distributions
// are implementation-defined and would break cross-platform reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive range. Modulo bias is irrelevant for the tiny spans used here.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo + 1);
    return lo + static_cast<int64_t>(gen_() % span);
  }

  // Box-Muller; generates pairs, keeps the spare.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable per-purpose stream derivation so that consumers (weight init,
// batch sampling, scene generation) never share a sequence.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  uint64_t x = base ^ (0x9E3779B97F4A7C15ULL + (stream << 1));
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

}  // namespace mmcaps
