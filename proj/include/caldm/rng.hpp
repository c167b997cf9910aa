#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <numbers>

namespace caldm {

// Counter-free 64-bit generator with a fully specified output sequence, so
// seeded procedures are reproducible across standard libraries.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int64_t uniform_int(int64_t lo, int64_t hi_exclusive) {
    return lo + static_cast<int64_t>(next() % static_cast<uint64_t>(hi_exclusive - lo));
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  uint64_t state_;
};

// Independent child seed for item `index` of a seeded family (slices,
// samples). Pure function of its inputs, so items can be produced in any order.
inline uint64_t derive_seed(uint64_t master, uint64_t index) {
  SplitMix64 mix(master ^ (0xD1B54A32D192ED03ull * (index + 1)));
  mix.next();
  return mix.next();
}

inline torch::Generator make_generator(uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return gen;
}

}  // namespace caldm
