#pragma once

#include <cstdint>
#include <string_view>

namespace vcap {

// SplitMix64 (Steele, Lea, Flood 2014). The exact update rule below is part of
// the reproducibility contract: every seeded artifact (synthetic features,
// parameter initialization) is defined by this 64-bit output sequence, so an
// alternate implementation can reproduce files bit for bit.
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   output = z ^ (z >> 31)
//
// Doubles are derived from the top 53 bits: (output >> 11) * 2^-53.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in the open interval (-s, s)
  double next_symmetric(double s) {
    double u = (double(next_u64() >> 11) + 0.5) * 0x1.0p-53;  // (0, 1)
    return (2.0 * u - 1.0) * s;
  }

  // uniform integer in [0, n)
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

 private:
  uint64_t state_;
};

// FNV-1a over the tag, mixed into the seed. Distinct tags give independent
// streams for the same user-facing seed.
inline uint64_t stream_seed(uint64_t seed, std::string_view tag) {
  uint64_t h = 1469598103934665603ull;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return seed ^ h;
}

}  // namespace vcap
