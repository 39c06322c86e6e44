#pragma once

#include <cstdint>

namespace vmseg::flopcount {

// Instrumented op counter. Tensor ops add their documented cost on every
// forward execution while enabled; the analytic complexity model sums the same
// cost functions, so analytic and instrumented counts agree exactly whenever
// both are computed.
//
// Convention (used consistently by counter and model):
//   - one multiply-accumulate = 2 ops
//   - every other scalar arithmetic op (lone mul/add, div, exp, ...) = 1 op
//   - norms and activations = 1 op per element
//   - data movement (gather, transpose, reshape, concat) = 0 ops
// Counts cover forward execution only (inference cost).

void reset();
void enable(bool on);
bool enabled();
uint64_t total();
void add(uint64_t ops);

// Shared cost formulas.
inline uint64_t cost_matmul(int64_t m, int64_t k, int64_t n) {
  return uint64_t(2) * uint64_t(m) * uint64_t(k) * uint64_t(n);
}
inline uint64_t cost_bias(int64_t rows, int64_t d) { return uint64_t(rows) * uint64_t(d); }
inline uint64_t cost_elementwise(int64_t n) { return uint64_t(n); }
inline uint64_t cost_activation(int64_t n) { return uint64_t(n); }
inline uint64_t cost_norm(int64_t n) { return uint64_t(n); }
// Depthwise conv, same padding: one k*k MAC window per channel per pixel.
inline uint64_t cost_depthwise(int64_t pixels, int64_t channels, int64_t k) {
  return uint64_t(2) * uint64_t(pixels) * uint64_t(channels) * uint64_t(k) * uint64_t(k);
}
// Valid cross-correlation of an M x N map with an m x n kernel.
inline uint64_t cost_conv_valid(int64_t M, int64_t N, int64_t m, int64_t n) {
  return uint64_t(2) * uint64_t(M - m + 1) * uint64_t(N - n + 1) * uint64_t(m) * uint64_t(n);
}
// Selective scan recurrence, per (step, channel, state) element:
//   exact mode:      dt*A, exp, (Abar-1)/A (2 ops), phi*B, Bbar*x, state MAC, y MAC = 10 ops
//   simplified mode: dt*A, exp, dt*B, Bbar*x, state MAC, y MAC = 8 ops
// plus the per-(step, channel) D-skip MAC. The small-|dt*A| series guard is
// counted at main-branch cost; the count may not depend on data values.
inline uint64_t cost_scan(int64_t L, int64_t d, int64_t H, bool exact) {
  uint64_t per_state = exact ? 10 : 8;
  return uint64_t(L) * uint64_t(d) * (per_state * uint64_t(H) + 2);
}

}  // namespace vmseg::flopcount
