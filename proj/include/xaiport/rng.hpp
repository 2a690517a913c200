#pragma once

#include <cstdint>

namespace xaiport {

// SplitMix64 stream. Bit-exact on every platform, which is what makes the
// byte-identical-report guarantee hold; do not swap in a platform RNG.
class Rng {
public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  // One mix step of the underlying 64-bit stream.
  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1): top 24 bits of the mix output over 2^24.
  float next_f32() { return float(next_u64() >> 40) * (1.0f / 16777216.0f); }

  // Uniform integer in [0, n); n must be >= 1 and <= 2^24.
  uint32_t next_below(uint32_t n) {
    uint32_t v = uint32_t(next_f32() * float(n));
    return v < n ? v : n - 1;
  }

  // Independent stream for parallel work: seed XOR stream-index.
  Rng split(uint64_t stream_index) const { return Rng(seed_ ^ stream_index); }

  uint64_t seed() const { return seed_; }

private:
  uint64_t seed_;
  uint64_t state_;
};

}  // namespace xaiport
