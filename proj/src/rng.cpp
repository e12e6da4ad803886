#include "cyclenet/rng.hpp"

#include <stdexcept>

namespace cyclenet {

namespace {
uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace

uint64_t SeededRng::next_below(uint64_t n) {
  if (n == 0) throw std::invalid_argument("SeededRng::next_below: n must be positive");
  // rejection sampling keeps the draw unbiased
  uint64_t limit = ~0ull - ~0ull % n;
  uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

uint64_t SeededRng::derive(uint64_t seed, uint64_t stream) { return mix64(seed ^ mix64(stream)); }

}  // namespace cyclenet
