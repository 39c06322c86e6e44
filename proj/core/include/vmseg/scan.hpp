#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "vmseg/rng.hpp"
#include "vmseg/tensor.hpp"

namespace vmseg {

enum class DiscretizeMode { exact, simplified };

// which realization of the masked scan product to run; automatic picks the
// L x L masked path for L <= 256 and the O(L*H) streaming path beyond
enum class MatrixFormPath { automatic, masked, streaming };

namespace detail {

// per-element discretization shared by every scan path: a_bar = exp(dt*a),
// b_bar = phi * b.  exact mode integrates the input over the step,
// phi = (exp(dt*a) - 1)/a, falling back to the series limit phi = dt when
// |dt*a| < 1e-6; simplified mode always uses phi = dt.
template <typename T>
struct DiscElem {
  T a_bar;
  T phi;
};

template <typename T>
inline DiscElem<T> scan_disc(T a, T dt, bool exact) {
  T da = a * dt;
  T a_bar = std::exp(da);
  if (!exact || std::abs(da) < T(1e-6)) return {a_bar, dt};
  return {a_bar, (a_bar - T(1)) / a};
}

}  // namespace detail

// trainable bundle that turns a sequence [L,d] into per-step scan inputs.
// A is stored as -exp(a_log) so it stays strictly negative; the step size
// runs through a rank-r factored linear map plus bias and a softplus so it
// stays strictly positive.
template <typename T>
struct ScanParams {
  int64_t d = 0;
  int64_t H = 0;
  Tensor<T> a_log;    // [d,H]
  Tensor<T> D;        // [d] per-channel skip gain
  Tensor<T> wb;       // [d,H]
  Tensor<T> wc;       // [d,H]
  Tensor<T> dt_down;  // [d,r]
  Tensor<T> dt_up;    // [r,d]
  Tensor<T> dt_bias;  // [d]

  // a_log spans -A over [1,H] log-uniformly per state index, D starts at 1,
  // projections start near zero so dt_bias controls the initial step sizes
  // (softplus(dt_bias) drawn log-uniformly from [1e-3, 1e-1])
  static ScanParams init(int64_t d, int64_t H, int64_t dt_rank, Rng& rng);

  Tensor<T> A() const;                          // [d,H], strictly negative
  Tensor<T> delta(const Tensor<T>& xs) const;   // [L,d], strictly positive
  Tensor<T> proj_B(const Tensor<T>& xs) const;  // [L,H]
  Tensor<T> proj_C(const Tensor<T>& xs) const;  // [L,H]

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".a_log", a_log);
    f(prefix + ".D", D);
    f(prefix + ".wb", wb);
    f(prefix + ".wc", wc);
    f(prefix + ".dt_down", dt_down);
    f(prefix + ".dt_up", dt_up);
    f(prefix + ".dt_bias", dt_bias);
  }
};

template <typename T>
struct ScanInputs {
  Tensor<T> x;      // [L,d]
  Tensor<T> delta;  // [L,d], > 0 elementwise
  Tensor<T> B;      // [L,H]
  Tensor<T> C;      // [L,H]
  Tensor<T> h0;     // [d,H]; undefined means zeros
};

template <typename T>
struct ScanOutput {
  Tensor<T> y;        // [L,d]
  Tensor<T> h_final;  // [d,H]
};

// one-step discretization over all channels and states; returns (a_bar, b_bar)
// as plain value tensors.  delta_k [d], A [d,H], B_k [H].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> discretize(const Tensor<T>& delta_k, const Tensor<T>& A,
                                           const Tensor<T>& B_k, DiscretizeMode mode);

// sequential state-space scan h_k = a_bar h_{k-1} + b_bar x_k,
// y_k = C_k h_k + D x_k.  Differentiable w.r.t. every input; gradients are
// bit-identical for every thread count.
template <typename T>
ScanOutput<T> scan_recurrence(const ScanInputs<T>& inp, const Tensor<T>& A, const Tensor<T>& D,
                              DiscretizeMode mode);

// closed-form realization of the same scan through the query/key/value
// product with cumulative decay weights and a lower-triangular mask.
// Value-only oracle path (no gradients); simplified discretization only.
template <typename T>
Tensor<T> scan_matrix_form(const ScanInputs<T>& inp, const Tensor<T>& A, DiscretizeMode mode,
                           MatrixFormPath path = MatrixFormPath::automatic);

// w[i,j,n] = prod_{t<=i} exp(A[j,n] * delta[t,j]); value-only.
// delta [L,d], A [d,H] -> [L,d,H]
template <typename T>
Tensor<T> cumulative_weights(const Tensor<T>& delta, const Tensor<T>& A);

}  // namespace vmseg
