#pragma once

#include <cstdint>

namespace cyclenet {

// Deterministic counter-based generator (SplitMix64). The output stream
// depends only on the 64-bit seed, never on platform or standard-library
// internals, so weight draws, dropout masks and generated datasets reproduce
// bit-for-bit. Instances are single-owner: do not share across threads.
class SeededRng {
 public:
  explicit SeededRng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1) with 53-bit resolution
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // unbiased integer in [0, n), n > 0
  uint64_t next_below(uint64_t n);

  bool bernoulli(double p) { return next_double() < p; }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

  // Seed for an independent substream, e.g. one per dataset sample:
  // derive(base_seed, index). Pure hash of (seed, stream).
  static uint64_t derive(uint64_t seed, uint64_t stream);

 private:
  uint64_t state_;
};

}  // namespace cyclenet
