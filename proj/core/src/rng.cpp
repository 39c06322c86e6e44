#include "vmseg/rng.hpp"

#include <cmath>

#include "vmseg/errors.hpp"

namespace vmseg {

int64_t Rng::uniform_int(int64_t n) {
  if (n <= 0) throw ContractError("Rng::uniform_int needs n > 0");
  // Rejection sampling to kill modulo bias.
  uint64_t un = uint64_t(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return int64_t(r % un);
}

double Rng::normal() {
  if (have_cached_) {
    have_cached_ = false;
    return cached_;
  }
  // Box-Muller; u1 in (0,1] so log stays finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 6.283185307179586476925286766559 * u2;
  cached_ = r * std::sin(theta);
  have_cached_ = true;
  return r * std::cos(theta);
}

}  // namespace vmseg
