#pragma once

#include <cstdint>
#include <vector>

namespace vmseg {

// Deterministic counter-based RNG. One root seed fans out into independent
// streams via child(): mixing (seed, stream-id) through splitmix64 decorrelates
// the streams, so dataset generation, shuffling, augmentation and weight init
// can all be derived from a single --seed without sharing state.
//
// Draws do not depend on libstdc++ distribution internals, so sequences are
// reproducible across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(mix(seed ^ kPhi)) {}

  Rng child(uint64_t stream) const { return Rng(mix(state_ ^ mix(stream + kPhi))); }

  uint64_t next_u64() {
    state_ += kPhi;
    return mix(state_);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  int64_t uniform_int(int64_t n);

  // Standard normal via Box-Muller (pairs cached).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // In-place Fisher-Yates shuffle of indices 0..n-1 layouts.
  template <typename V>
  void shuffle(V& v) {
    for (int64_t i = int64_t(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[i], v[size_t(j)]);
    }
  }

 private:
  static constexpr uint64_t kPhi = 0x9e3779b97f4a7c15ull;

  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  uint64_t state_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace vmseg
