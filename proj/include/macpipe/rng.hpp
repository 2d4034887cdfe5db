#pragma once

#include <cstdint>

namespace macpipe {

// splitmix64 finalizer, used as the project-wide 64-bit mixing step.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Seed derivation for per-sentence generators: hash64(global_seed, doc, sent).
constexpr std::uint64_t hash64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix64(a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

// PCG32 (XSH RR 64/32), reference algorithm by M.E. O'Neill.
// Fixed published generator so that seeded output is identical across
// platforms and implementations.
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t initstate, std::uint64_t initseq = 0xda3e39cb94b95bdbull) {
    state_ = 0u;
    inc_ = (initseq << 1u) | 1u;
    next_u32();
    state_ += initstate;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  // Unbiased draw in [0, bound) via the reference rejection method.
  std::uint32_t bounded(std::uint32_t bound) {
    std::uint32_t threshold = (0u - bound) % bound;
    for (;;) {
      std::uint32_t r = next_u32();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform double in [0, 1) with 32 bits of resolution.
  double next_double() { return next_u32() * 0x1.0p-32; }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

}  // namespace macpipe
