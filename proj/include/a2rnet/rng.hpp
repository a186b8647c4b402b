#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "a2rnet/common.hpp"

namespace a2r {

// Seeded random source with bit-portable output. std::mt19937_64 has a
// standardized bit stream, but the std distributions do not, so uniform
// doubles are derived directly from the top 53 bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with full 53-bit resolution.
  Scalar uniform() { return static_cast<Scalar>(gen_() >> 11) * 0x1.0p-53; }

  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

  // Uniform index in [0, n); modulo bias is irrelevant at the scales used
  // here and keeps the draw count per call fixed.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

  // Fisher-Yates permutation; deterministic for a given seed and length.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace a2r
