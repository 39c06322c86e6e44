#include "vmseg/scan.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "parallel.hpp"
#include "vmseg/errors.hpp"
#include "vmseg/flopcount.hpp"

namespace vmseg {

using detail::make_op;
using detail::Node;
using detail::parallel_for;
using detail::scan_disc;

namespace {

template <typename T>
const Node<T>& req(const Tensor<T>& t, const char* what) {
  if (!t.defined()) throw ContractError(std::string("undefined tensor passed as ") + what);
  return *t.node();
}

template <typename T>
void check_positive_delta(const Node<T>& dn, const char* who) {
  for (T v : dn.value)
    if (!(v > T(0))) throw ContractError(std::string(who) + ": delta must be strictly positive");
}

struct ScanDims {
  int64_t L, d, H;
};

template <typename T>
ScanDims checked_dims(const ScanInputs<T>& inp, const Tensor<T>& A, const char* who) {
  const auto& xn = req(inp.x, "scan x");
  const auto& dn = req(inp.delta, "scan delta");
  const auto& bn = req(inp.B, "scan B");
  const auto& cn = req(inp.C, "scan C");
  const auto& an = req(A, "scan A");
  if (xn.shape.size() != 2)
    throw ShapeError(std::string(who) + ": x must be [L,d], got " + shape_str(xn.shape));
  int64_t L = xn.shape[0], d = xn.shape[1];
  if (an.shape.size() != 2 || an.shape[0] != d)
    throw ShapeError(std::string(who) + ": A must be [d,H] with d=" + std::to_string(d) +
                     ", got " + shape_str(an.shape));
  int64_t H = an.shape[1];
  if (dn.shape != xn.shape)
    throw ShapeError(std::string(who) + ": delta " + shape_str(dn.shape) + " != x " +
                     shape_str(xn.shape));
  if (bn.shape != Shape{L, H})
    throw ShapeError(std::string(who) + ": B must be [L,H], got " + shape_str(bn.shape));
  if (cn.shape != Shape{L, H})
    throw ShapeError(std::string(who) + ": C must be [L,H], got " + shape_str(cn.shape));
  if (inp.h0.defined() && req(inp.h0, "scan h0").shape != Shape{d, H})
    throw ShapeError(std::string(who) + ": h0 must be [d,H], got " +
                     shape_str(inp.h0.shape()));
  check_positive_delta(dn, who);
  return {L, d, H};
}

int64_t grain_for(int64_t work_per_item) {
  return std::max<int64_t>(1, 8192 / std::max<int64_t>(1, work_per_item));
}

std::shared_ptr<const std::vector<int64_t>> iota_index(int64_t start, int64_t count) {
  std::vector<int64_t> v(static_cast<size_t>(count));
  std::iota(v.begin(), v.end(), start);
  return std::make_shared<const std::vector<int64_t>>(std::move(v));
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> discretize(const Tensor<T>& delta_k, const Tensor<T>& A,
                                           const Tensor<T>& B_k, DiscretizeMode mode) {
  const auto& dn = req(delta_k, "discretize delta");
  const auto& an = req(A, "discretize A");
  const auto& bn = req(B_k, "discretize B");
  if (an.shape.size() != 2)
    throw ShapeError("discretize: A must be [d,H], got " + shape_str(an.shape));
  int64_t d = an.shape[0], H = an.shape[1];
  if (dn.shape != Shape{d})
    throw ShapeError("discretize: delta must be [d], got " + shape_str(dn.shape));
  if (bn.shape != Shape{H})
    throw ShapeError("discretize: B must be [H], got " + shape_str(bn.shape));
  check_positive_delta(dn, "discretize");
  bool exact = mode == DiscretizeMode::exact;
  std::vector<T> abar(size_t(d * H)), bbar(size_t(d * H));
  for (int64_t j = 0; j < d; ++j) {
    for (int64_t n = 0; n < H; ++n) {
      auto de = scan_disc(an.value[size_t(j * H + n)], dn.value[size_t(j)], exact);
      abar[size_t(j * H + n)] = de.a_bar;
      bbar[size_t(j * H + n)] = de.phi * bn.value[size_t(n)];
    }
  }
  return {Tensor<T>::from_data({d, H}, std::move(abar)),
          Tensor<T>::from_data({d, H}, std::move(bbar))};
}

template <typename T>
ScanOutput<T> scan_recurrence(const ScanInputs<T>& inp, const Tensor<T>& A, const Tensor<T>& D,
                              DiscretizeMode mode) {
  auto [L, d, H] = checked_dims(inp, A, "scan_recurrence");
  const auto& dn2 = req(D, "scan D");
  if (dn2.shape != Shape{d})
    throw ShapeError("scan_recurrence: D must be [d], got " + shape_str(dn2.shape));
  Tensor<T> h0 = inp.h0.defined() ? inp.h0 : Tensor<T>::zeros({d, H});

  bool exact = mode == DiscretizeMode::exact;
  bool needs_grad = inp.x.requires_grad() || inp.delta.requires_grad() || A.requires_grad() ||
                    inp.B.requires_grad() || inp.C.requires_grad() || D.requires_grad() ||
                    h0.requires_grad();

  const T* xv = inp.x.data().data();
  const T* dtv = inp.delta.data().data();
  const T* Av = A.data().data();
  const T* Bv = inp.B.data().data();
  const T* Cv = inp.C.data().data();
  const T* Dv = D.data().data();
  const T* h0v = h0.data().data();

  // trajectories kept for the backward pass only; plain forward runs on a
  // rolling per-channel state
  auto h_seq = std::make_shared<std::vector<T>>();
  auto abar_st = std::make_shared<std::vector<T>>();
  if (needs_grad) {
    h_seq->resize(size_t((L + 1) * d * H));
    abar_st->resize(size_t(L * d * H));
  }

  std::vector<T> out(size_t(L * d + d * H));
  T* yv = out.data();
  T* hfv = out.data() + L * d;

  parallel_for(d, grain_for(L * H * 8), [&, L = L, d = d, H = H](int64_t j) {
    std::vector<T> hj(static_cast<size_t>(H));
    for (int64_t n = 0; n < H; ++n) hj[size_t(n)] = h0v[j * H + n];
    if (needs_grad)
      for (int64_t n = 0; n < H; ++n) (*h_seq)[size_t(j * H + n)] = hj[size_t(n)];
    for (int64_t k = 0; k < L; ++k) {
      T dt = dtv[k * d + j];
      T xk = xv[k * d + j];
      T acc = 0;
      for (int64_t n = 0; n < H; ++n) {
        auto de = scan_disc(Av[j * H + n], dt, exact);
        T h = de.a_bar * hj[size_t(n)] + de.phi * Bv[k * H + n] * xk;
        hj[size_t(n)] = h;
        if (needs_grad) {
          (*abar_st)[size_t((k * d + j) * H + n)] = de.a_bar;
          (*h_seq)[size_t(((k + 1) * d + j) * H + n)] = h;
        }
        acc += Cv[k * H + n] * h;
      }
      yv[k * d + j] = acc + Dv[j] * xk;
    }
    for (int64_t n = 0; n < H; ++n) hfv[j * H + n] = hj[size_t(n)];
  });
  flopcount::add(flopcount::cost_scan(L, d, H, exact));

  auto raw = make_op<T>(
      "scan", Shape{L * d + d * H}, std::move(out),
      {inp.x.node(), inp.delta.node(), A.node(), inp.B.node(), inp.C.node(), D.node(), h0.node()},
      [L = L, d = d, H = H, exact, h_seq, abar_st](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pdt = *self.parents[1];
        auto& pA = *self.parents[2];
        auto& pB = *self.parents[3];
        auto& pC = *self.parents[4];
        auto& pD = *self.parents[5];
        auto& ph0 = *self.parents[6];
        const T* gy = self.grad.data();
        const T* ghf = gy + L * d;
        const T* xv = px.value.data();
        const T* dtv = pdt.value.data();
        const T* Av = pA.value.data();
        const T* Bv = pB.value.data();
        const T* Cv = pC.value.data();
        const T* Dv = pD.value.data();
        const T* hs = h_seq->data();
        const T* ab = abar_st->data();

        // pass 1: state gradient right after each step absorbs its y term;
        // disjoint per (channel, state) so the parallel split cannot change
        // any summation order
        std::vector<T> gh_use(size_t(L * d * H));
        std::vector<T> gh0v(size_t(d * H));
        parallel_for(d, grain_for(L * H * 4), [&](int64_t j) {
          for (int64_t n = 0; n < H; ++n) {
            T gh = ghf[j * H + n];
            for (int64_t k = L - 1; k >= 0; --k) {
              size_t e = size_t((k * d + j) * H + n);
              gh += gy[k * d + j] * Cv[k * H + n];
              gh_use[e] = gh;
              gh *= ab[e];
            }
            gh0v[size_t(j * H + n)] = gh;
          }
        });

        // pass 2: every output element is one fixed-order reduction
        if (px.requires_grad || pdt.requires_grad) {
          if (px.requires_grad) px.ensure_grad();
          if (pdt.requires_grad) pdt.ensure_grad();
          parallel_for(L, grain_for(d * H * 6), [&](int64_t k) {
            for (int64_t j = 0; j < d; ++j) {
              T dt = dtv[k * d + j];
              T xk = xv[k * d + j];
              T gx = gy[k * d + j] * Dv[j];
              T gdt = 0;
              for (int64_t n = 0; n < H; ++n) {
                size_t e = size_t((k * d + j) * H + n);
                T a = Av[j * H + n];
                T abar = ab[e];
                auto de = scan_disc(a, dt, exact);
                T ghu = gh_use[e];
                T b = Bv[k * H + n];
                T dphi_ddt = exact ? abar : T(1);
                gx += ghu * de.phi * b;
                gdt += ghu * (a * abar * hs[e] + dphi_ddt * b * xk);
              }
              if (px.requires_grad) px.grad[size_t(k * d + j)] += gx;
              if (pdt.requires_grad) pdt.grad[size_t(k * d + j)] += gdt;
            }
          });
        }
        if (pA.requires_grad) {
          pA.ensure_grad();
          parallel_for(d, grain_for(L * H * 6), [&](int64_t j) {
            for (int64_t n = 0; n < H; ++n) {
              T a = Av[j * H + n];
              T g = 0;
              for (int64_t k = 0; k < L; ++k) {
                size_t e = size_t((k * d + j) * H + n);
                T dt = dtv[k * d + j];
                T abar = ab[e];
                T term = dt * abar * hs[e];
                if (exact) {
                  T da = a * dt;
                  // d(phi)/dA with the removable singularity expanded in series
                  T dphi_da;
                  if (std::abs(da) < T(1e-3)) {
                    dphi_da = dt * dt * (T(0.5) + da / T(3));
                  } else {
                    T phi = (abar - T(1)) / a;
                    dphi_da = (dt * abar - phi) / a;
                  }
                  term += dphi_da * Bv[k * H + n] * xv[k * d + j];
                }
                g += gh_use[e] * term;
              }
              pA.grad[size_t(j * H + n)] += g;
            }
          });
        }
        if (pB.requires_grad) {
          pB.ensure_grad();
          parallel_for(L, grain_for(d * H * 4), [&](int64_t k) {
            for (int64_t n = 0; n < H; ++n) {
              T g = 0;
              for (int64_t j = 0; j < d; ++j) {
                size_t e = size_t((k * d + j) * H + n);
                auto de = scan_disc(Av[j * H + n], dtv[k * d + j], exact);
                g += gh_use[e] * de.phi * xv[k * d + j];
              }
              pB.grad[size_t(k * H + n)] += g;
            }
          });
        }
        if (pC.requires_grad) {
          pC.ensure_grad();
          parallel_for(L, grain_for(d * H * 2), [&](int64_t k) {
            for (int64_t n = 0; n < H; ++n) {
              T g = 0;
              for (int64_t j = 0; j < d; ++j)
                g += gy[k * d + j] * hs[size_t(((k + 1) * d + j) * H + n)];
              pC.grad[size_t(k * H + n)] += g;
            }
          });
        }
        if (pD.requires_grad) {
          pD.ensure_grad();
          parallel_for(d, grain_for(L * 2), [&](int64_t j) {
            T g = 0;
            for (int64_t k = 0; k < L; ++k) g += gy[k * d + j] * xv[k * d + j];
            pD.grad[size_t(j)] += g;
          });
        }
        if (ph0.requires_grad) {
          ph0.ensure_grad();
          for (size_t i = 0; i < gh0v.size(); ++i) ph0.grad[i] += gh0v[i];
        }
      });

  ScanOutput<T> result;
  result.y = reshape(gather(raw, iota_index(0, L * d), Shape{L * d}), Shape{L, d});
  result.h_final = reshape(gather(raw, iota_index(L * d, d * H), Shape{d * H}), Shape{d, H});
  return result;
}

template <typename T>
Tensor<T> scan_matrix_form(const ScanInputs<T>& inp, const Tensor<T>& A, DiscretizeMode mode,
                           MatrixFormPath path) {
  if (mode != DiscretizeMode::simplified)
    throw ConfigError("scan_matrix_form implements the simplified discretization only");
  auto [L, d, H] = checked_dims(inp, A, "scan_matrix_form");
  Tensor<T> h0 = inp.h0.defined() ? inp.h0 : Tensor<T>::zeros({d, H});

  const T* xv = inp.x.data().data();
  const T* dtv = inp.delta.data().data();
  const T* Av = A.data().data();
  const T* Bv = inp.B.data().data();
  const T* Cv = inp.C.data().data();
  const T* h0v = h0.data().data();

  bool masked = path == MatrixFormPath::masked ||
                (path == MatrixFormPath::automatic && L <= 256);
  std::vector<T> out(size_t(L * d));

  if (masked) {
    // literal masked product: row i attends to rows l <= i with weight
    // Q_i K_l exp(e_i - e_l), where e_i is the cumulative decay exponent.
    // Keeping the exponents as differences avoids overflowing 1/w_l.
    parallel_for(d, 1, [&, L = L, d = d, H = H](int64_t j) {
      std::vector<T> e(size_t(L * H));
      for (int64_t n = 0; n < H; ++n) e[size_t(n)] = dtv[0 * d + j] * Av[j * H + n];
      for (int64_t i = 1; i < L; ++i)
        for (int64_t n = 0; n < H; ++n)
          e[size_t(i * H + n)] = e[size_t((i - 1) * H + n)] + dtv[i * d + j] * Av[j * H + n];
      std::vector<T> V(static_cast<size_t>(L));
      for (int64_t l = 0; l < L; ++l) V[size_t(l)] = xv[l * d + j] * dtv[l * d + j];
      for (int64_t i = 0; i < L; ++i) {
        T acc = 0;
        for (int64_t n = 0; n < H; ++n)
          acc += Cv[i * H + n] * std::exp(e[size_t(i * H + n)]) * h0v[j * H + n];
        for (int64_t l = 0; l <= i; ++l) {
          T s = 0;
          for (int64_t n = 0; n < H; ++n)
            s += Cv[i * H + n] * Bv[l * H + n] *
                 std::exp(e[size_t(i * H + n)] - e[size_t(l * H + n)]);
          acc += s * V[size_t(l)];
        }
        out[size_t(i * d + j)] = acc;
      }
    });
  } else {
    // streaming form of the same product: carry K'V state and the running
    // decay weight instead of materializing the L x L matrix
    parallel_for(d, grain_for(L * H * 6), [&, L = L, d = d, H = H](int64_t j) {
      std::vector<T> t(size_t(H), T(0));
      std::vector<T> p(size_t(H), T(1));
      for (int64_t i = 0; i < L; ++i) {
        T vi = xv[i * d + j] * dtv[i * d + j];
        T acc = 0;
        for (int64_t n = 0; n < H; ++n) {
          T w = std::exp(dtv[i * d + j] * Av[j * H + n]);
          p[size_t(n)] *= w;
          t[size_t(n)] = w * t[size_t(n)] + Bv[i * H + n] * vi;
          acc += Cv[i * H + n] * (t[size_t(n)] + p[size_t(n)] * h0v[j * H + n]);
        }
        out[size_t(i * d + j)] = acc;
      }
    });
  }
  return Tensor<T>::from_data({L, d}, std::move(out));
}

template <typename T>
Tensor<T> cumulative_weights(const Tensor<T>& delta, const Tensor<T>& A) {
  const auto& dn = req(delta, "cumulative_weights delta");
  const auto& an = req(A, "cumulative_weights A");
  if (dn.shape.size() != 2)
    throw ShapeError("cumulative_weights: delta must be [L,d], got " + shape_str(dn.shape));
  int64_t L = dn.shape[0], d = dn.shape[1];
  if (an.shape.size() != 2 || an.shape[0] != d)
    throw ShapeError("cumulative_weights: A must be [d,H], got " + shape_str(an.shape));
  int64_t H = an.shape[1];
  check_positive_delta(dn, "cumulative_weights");
  std::vector<T> w(size_t(L * d * H));
  parallel_for(d, grain_for(L * H * 2), [&, L = L, d = d, H = H](int64_t j) {
    std::vector<T> e(size_t(H), T(0));
    for (int64_t i = 0; i < L; ++i) {
      for (int64_t n = 0; n < H; ++n) {
        e[size_t(n)] += dn.value[size_t(i * d + j)] * an.value[size_t(j * H + n)];
        w[size_t((i * d + j) * H + n)] = std::exp(e[size_t(n)]);
      }
    }
  });
  return Tensor<T>::from_data({L, d, H}, std::move(w));
}

// ---- ScanParams -------------------------------------------------------------

template <typename T>
ScanParams<T> ScanParams<T>::init(int64_t d, int64_t H, int64_t dt_rank, Rng& rng) {
  if (d <= 0 || H <= 0 || dt_rank <= 0)
    throw ConfigError("ScanParams::init: d, H, dt_rank must be positive");
  ScanParams<T> p;
  p.d = d;
  p.H = H;

  std::vector<T> alog(size_t(d * H));
  for (int64_t j = 0; j < d; ++j)
    for (int64_t n = 0; n < H; ++n)
      alog[size_t(j * H + n)] =
          H == 1 ? T(0) : T(double(n) / double(H - 1) * std::log(double(H)));
  p.a_log = Tensor<T>::from_data({d, H}, std::move(alog), true);
  p.D = Tensor<T>::full({d}, T(1), true);

  auto normal = [&rng](Shape shape, double stddev) {
    std::vector<T> v(size_t(shape_numel(shape)));
    for (auto& x : v) x = T(rng.normal(0.0, stddev));
    return Tensor<T>::from_data(std::move(shape), std::move(v), true);
  };
  p.wb = normal({d, H}, 0.02);
  p.wc = normal({d, H}, 0.02);
  p.dt_down = normal({d, dt_rank}, 0.02);
  p.dt_up = normal({dt_rank, d}, 0.02);

  std::vector<T> bias(static_cast<size_t>(d));
  for (auto& b : bias) {
    double target = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    b = T(std::log(std::expm1(target)));
  }
  p.dt_bias = Tensor<T>::from_data({d}, std::move(bias), true);
  return p;
}

template <typename T>
Tensor<T> ScanParams<T>::A() const {
  return neg(exp(a_log));
}

template <typename T>
Tensor<T> ScanParams<T>::delta(const Tensor<T>& xs) const {
  return softplus(add_bias(matmul(matmul(xs, dt_down), dt_up), dt_bias));
}

template <typename T>
Tensor<T> ScanParams<T>::proj_B(const Tensor<T>& xs) const {
  return matmul(xs, wb);
}

template <typename T>
Tensor<T> ScanParams<T>::proj_C(const Tensor<T>& xs) const {
  return matmul(xs, wc);
}

// ---- instantiations ----------------------------------------------------------

#define VMSEG_INSTANTIATE_SCAN(T)                                                              \
  template struct ScanParams<T>;                                                               \
  template std::pair<Tensor<T>, Tensor<T>> discretize(const Tensor<T>&, const Tensor<T>&,     \
                                                      const Tensor<T>&, DiscretizeMode);      \
  template ScanOutput<T> scan_recurrence(const ScanInputs<T>&, const Tensor<T>&,              \
                                         const Tensor<T>&, DiscretizeMode);                   \
  template Tensor<T> scan_matrix_form(const ScanInputs<T>&, const Tensor<T>&, DiscretizeMode, \
                                      MatrixFormPath);                                        \
  template Tensor<T> cumulative_weights(const Tensor<T>&, const Tensor<T>&);

VMSEG_INSTANTIATE_SCAN(float)
VMSEG_INSTANTIATE_SCAN(double)

}  // namespace vmseg
