#pragma once

#include <cstdint>

#include "vmseg/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vmseg::detail {

// Runs f(i) for i in [0, n). Parallelizes only when the range is worth it and
// the thread cap allows; f must touch disjoint state per index so results are
// identical for every thread count.
template <typename F>
void parallel_for(int64_t n, int64_t grain, F&& f) {
#ifdef _OPENMP
  int nt = threads::max_threads();
  if (nt > 1 && n >= grain * 2) {
#pragma omp parallel for num_threads(nt) schedule(static)
    for (int64_t i = 0; i < n; ++i) f(i);
    return;
  }
#endif
  for (int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace vmseg::detail
