#include "vmseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "parallel.hpp"
#include "vmseg/flopcount.hpp"

namespace vmseg {

namespace detail {

int64_t next_node_id() {
  static std::atomic<int64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
static void check_finite_span(std::span<const T> v, const Node<T>& n, const char* phase) {
  for (T x : v) {
    if (!std::isfinite(double(x))) {
      throw NumericError(std::string("non-finite value in ") + phase + " of node #" +
                         std::to_string(n.id) + " (op " + n.op + ")");
    }
  }
}

template <typename T>
void check_finite_value(const Node<T>& n, const char* phase) {
  check_finite_span<T>({n.value.data(), n.value.size()}, n, phase);
}

template <typename T>
Tensor<T> make_op(std::string op, Shape shape, std::vector<T> value,
                  std::vector<std::shared_ptr<Node<T>>> parents,
                  std::function<void(Node<T>&)> backprop) {
  if (shape_numel(shape) != int64_t(value.size()))
    throw ShapeError("op " + op + ": value size does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = std::move(op);
  n->id = next_node_id();
  n->leaf = false;
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  if (debug::check_finite()) check_finite_value(*n, "forward");
  return Tensor<T>(n);
}

template <typename T>
static void accumulate(Node<T>& dst, const std::vector<T>& g) {
  dst.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace detail

using detail::make_op;
using detail::Node;
using detail::parallel_for;

namespace {

template <typename T>
const Node<T>& req(const Tensor<T>& t, const char* what) {
  if (!t.defined()) throw ContractError(std::string("undefined tensor passed as ") + what);
  return *t.node();
}

template <typename T>
std::shared_ptr<Node<T>> leaf_node(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != int64_t(data.size()))
    throw ShapeError("tensor data size does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->id = detail::next_node_id();
  return n;
}

// out[m,n] = a[m,k] * b[k,n]
template <typename T>
void mm_nn(const T* a, const T* b, T* out, int64_t m, int64_t k, int64_t n) {
  parallel_for(m, std::max<int64_t>(1, 16384 / std::max<int64_t>(1, k * n)), [&](int64_t i) {
    T* orow = out + i * n;
    std::fill(orow, orow + n, T(0));
    const T* arow = a + i * k;
    for (int64_t l = 0; l < k; ++l) {
      T av = arow[l];
      const T* brow = b + l * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  });
}

// out[m,n] += a[m,k] * b[n,k]^T
template <typename T>
void mm_nt_acc(const T* a, const T* b, T* out, int64_t m, int64_t k, int64_t n) {
  parallel_for(m, std::max<int64_t>(1, 16384 / std::max<int64_t>(1, k * n)), [&](int64_t i) {
    const T* arow = a + i * k;
    T* orow = out + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T s = 0;
      for (int64_t l = 0; l < k; ++l) s += arow[l] * brow[l];
      orow[j] += s;
    }
  });
}

// out[m,n] += a[k,m]^T * b[k,n]
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* out, int64_t m, int64_t k, int64_t n) {
  parallel_for(m, std::max<int64_t>(1, 16384 / std::max<int64_t>(1, k * n)), [&](int64_t i) {
    T* orow = out + i * n;
    for (int64_t l = 0; l < k; ++l) {
      T av = a[l * m + i];
      const T* brow = b + l * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  });
}

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_elementwise(const char* name, const Tensor<T>& a, FwdFn fwd, BwdFn dydx) {
  const auto& an = req(a, name);
  std::vector<T> out(an.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(an.value[i]);
  flopcount::add(flopcount::cost_activation(int64_t(out.size())));
  return make_op<T>(
      name, an.shape, std::move(out), {a.node()}, [dydx](Node<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
          p.grad[i] += self.grad[i] * dydx(p.value[i], self.value[i]);
      });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(leaf_node<T>(std::move(shape), std::vector<T>(size_t(n), T(0)), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(leaf_node<T>(std::move(shape), std::vector<T>(size_t(n), value), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  return Tensor(leaf_node<T>(std::move(shape), std::move(data), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(leaf_node<T>(Shape{}, std::vector<T>{value}, false));
}

template <typename T>
T Tensor<T>::item() const {
  if (!defined() || numel() != 1) throw ContractError("item() needs a defined scalar tensor");
  return node_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::mut_data() {
  if (!node_->leaf) throw ContractError("mut_data on op output #" + std::to_string(node_->id) +
                                        " (op " + node_->op + "); op outputs are immutable");
  return {node_->value.data(), node_->value.size()};
}

template <typename T>
std::span<T> Tensor<T>::mut_grad() {
  node_->ensure_grad();
  return {node_->grad.data(), node_->grad.size()};
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.clear();
}

// ---- ops -------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& an = req(a, "matmul lhs");
  const auto& bn = req(b, "matmul rhs");
  if (an.shape.size() != 2 || bn.shape.size() != 2)
    throw ShapeError("matmul needs 2-D tensors, got " + shape_str(an.shape) + " x " +
                     shape_str(bn.shape));
  int64_t m = an.shape[0], k = an.shape[1], k2 = bn.shape[0], n = bn.shape[1];
  if (k != k2)
    throw ShapeError("matmul inner dims differ: " + shape_str(an.shape) + " x " +
                     shape_str(bn.shape));
  std::vector<T> out(size_t(m * n));
  mm_nn(an.value.data(), bn.value.data(), out.data(), m, k, n);
  flopcount::add(flopcount::cost_matmul(m, k, n));
  return make_op<T>(
      "matmul", Shape{m, n}, std::move(out), {a.node(), b.node()},
      [m, k, n](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          mm_nt_acc(self.grad.data(), pb.value.data(), pa.grad.data(), m, n, k);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          mm_tn_acc(pa.value.data(), self.grad.data(), pb.grad.data(), k, m, n);
        }
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  const auto& an = req(a, "transpose");
  if (an.shape.size() != 2) throw ShapeError("transpose needs a 2-D tensor, got " + shape_str(an.shape));
  int64_t m = an.shape[0], n = an.shape[1];
  std::vector<T> out(size_t(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[size_t(j * m + i)] = an.value[size_t(i * n + j)];
  return make_op<T>("transpose", Shape{n, m}, std::move(out), {a.node()}, [m, n](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) p.grad[size_t(i * n + j)] += self.grad[size_t(j * m + i)];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  const auto& an = req(a, "reshape");
  if (shape_numel(shape) != int64_t(an.value.size()))
    throw ShapeError("reshape " + shape_str(an.shape) + " -> " + shape_str(shape) +
                     " changes element count");
  std::vector<T> out = an.value;
  return make_op<T>("reshape", std::move(shape), std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    detail::accumulate(p, self.grad);
  });
}

namespace {

template <typename T, typename Fn>
Tensor<T> binary_same_shape(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fn fwd,
                            T da, T db) {
  const auto& an = req(a, name);
  const auto& bn = req(b, name);
  if (!same_shape(an.shape, bn.shape))
    throw ShapeError(std::string(name) + " shape mismatch: " + shape_str(an.shape) + " vs " +
                     shape_str(bn.shape));
  std::vector<T> out(an.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(an.value[i], bn.value[i]);
  flopcount::add(flopcount::cost_elementwise(int64_t(out.size())));
  return make_op<T>(name, an.shape, std::move(out), {a.node(), b.node()}, [da, db](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += da * self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += db * self.grad[i];
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_same_shape<T>("add", a, b, [](T x, T y) { return x + y; }, T(1), T(1));
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_same_shape<T>("sub", a, b, [](T x, T y) { return x - y; }, T(1), T(-1));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& an = req(a, "mul");
  const auto& bn = req(b, "mul");
  if (!same_shape(an.shape, bn.shape))
    throw ShapeError("mul shape mismatch: " + shape_str(an.shape) + " vs " + shape_str(bn.shape));
  std::vector<T> out(an.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = an.value[i] * bn.value[i];
  flopcount::add(flopcount::cost_elementwise(int64_t(out.size())));
  return make_op<T>("mul", an.shape, std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& an = req(a, "div");
  const auto& bn = req(b, "div");
  if (!same_shape(an.shape, bn.shape))
    throw ShapeError("div shape mismatch: " + shape_str(an.shape) + " vs " + shape_str(bn.shape));
  std::vector<T> out(an.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = an.value[i] / bn.value[i];
  flopcount::add(flopcount::cost_elementwise(int64_t(out.size())));
  return make_op<T>("div", an.shape, std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] / pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        pb.grad[i] -= self.grad[i] * self.value[i] / pb.value[i];
    }
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  const auto& an = req(a, "add_scalar");
  std::vector<T> out(an.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = an.value[i] + c;
  flopcount::add(flopcount::cost_elementwise(int64_t(out.size())));
  return make_op<T>("add_scalar", an.shape, std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    detail::accumulate(p, self.grad);
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  const auto& an = req(a, "scale");
  std::vector<T> out(an.value.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = an.value[i] * c;
  flopcount::add(flopcount::cost_elementwise(int64_t(out.size())));
  return make_op<T>("scale", an.shape, std::move(out), {a.node()}, [c](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += c * self.grad[i];
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const auto& xn = req(x, "add_bias input");
  const auto& bn = req(bias, "add_bias bias");
  if (bn.shape.size() != 1) throw ShapeError("bias must be 1-D, got " + shape_str(bn.shape));
  int64_t d = bn.shape[0];
  if (xn.shape.empty() || xn.shape.back() != d)
    throw ShapeError("add_bias: input " + shape_str(xn.shape) + " last dim != bias size " +
                     std::to_string(d));
  int64_t rows = int64_t(xn.value.size()) / d;
  std::vector<T> out(xn.value.size());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < d; ++c)
      out[size_t(r * d + c)] = xn.value[size_t(r * d + c)] + bn.value[size_t(c)];
  flopcount::add(flopcount::cost_bias(rows, d));
  return make_op<T>("add_bias", xn.shape, std::move(out), {x.node(), bias.node()},
                    [rows, d](Node<T>& self) {
                      auto& px = *self.parents[0];
                      auto& pb = *self.parents[1];
                      if (px.requires_grad) detail::accumulate(px, self.grad);
                      if (pb.requires_grad) {
                        pb.ensure_grad();
                        for (int64_t r = 0; r < rows; ++r)
                          for (int64_t c = 0; c < d; ++c)
                            pb.grad[size_t(c)] += self.grad[size_t(r * d + c)];
                      }
                    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const auto& an = req(a, "sum");
  T s = 0;
  for (T v : an.value) s += v;
  flopcount::add(flopcount::cost_elementwise(int64_t(an.value.size())));
  return make_op<T>("sum", Shape{}, std::vector<T>{s}, {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    T g = self.grad[0];
    for (auto& v : p.grad) v += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const auto& an = req(a, "mean");
  if (an.value.empty()) throw ShapeError("mean of an empty tensor");
  T s = 0;
  for (T v : an.value) s += v;
  T n = T(an.value.size());
  flopcount::add(flopcount::cost_elementwise(int64_t(an.value.size())));
  return make_op<T>("mean", Shape{}, std::vector<T>{s / n}, {a.node()}, [n](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    T g = self.grad[0] / n;
    for (auto& v : p.grad) v += g;
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary_elementwise<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary_elementwise<T>(
      "neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_elementwise<T>(
      "sigmoid", a, [](T x) { return stable_sigmoid(x); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return unary_elementwise<T>(
      "silu", a, [](T x) { return x * stable_sigmoid(x); },
      [](T x, T) {
        T s = stable_sigmoid(x);
        return s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return unary_elementwise<T>(
      "softplus", a, [](T x) { return stable_softplus(x); },
      [](T x, T) { return stable_sigmoid(x); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_elementwise<T>(
      "gelu", a, [](T x) { return T(0.5) * x * T(1 + std::erf(double(x) * inv_sqrt2)); },
      [](T x, T) {
        double cdf = 0.5 * (1 + std::erf(double(x) * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * double(x) * double(x));
        return T(cdf + double(x) * pdf);
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  const auto& xn = req(x, "layer_norm input");
  const auto& gn = req(gamma, "layer_norm gamma");
  const auto& bn = req(beta, "layer_norm beta");
  if (gn.shape.size() != 1 || bn.shape.size() != 1 || gn.shape != bn.shape)
    throw ShapeError("layer_norm gamma/beta must be matching 1-D tensors");
  int64_t d = gn.shape[0];
  if (d == 0) throw ShapeError("layer_norm over zero-width dim");
  if (xn.shape.empty() || xn.shape.back() != d)
    throw ShapeError("layer_norm: input " + shape_str(xn.shape) + " last dim != " +
                     std::to_string(d));
  int64_t rows = int64_t(xn.value.size()) / d;
  std::vector<T> out(xn.value.size());
  std::vector<T> xhat(xn.value.size());
  std::vector<T> inv(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xn.value.data() + r * d;
    T mu = 0;
    for (int64_t c = 0; c < d; ++c) mu += xr[c];
    mu /= T(d);
    T var = 0;
    for (int64_t c = 0; c < d; ++c) {
      T t = xr[c] - mu;
      var += t * t;
    }
    var /= T(d);
    T iv = T(1) / std::sqrt(var + T(eps));
    inv[size_t(r)] = iv;
    for (int64_t c = 0; c < d; ++c) {
      T h = (xr[c] - mu) * iv;
      xhat[size_t(r * d + c)] = h;
      out[size_t(r * d + c)] = h * gn.value[size_t(c)] + bn.value[size_t(c)];
    }
  }
  flopcount::add(flopcount::cost_norm(int64_t(xn.value.size())));
  return make_op<T>(
      "layer_norm", xn.shape, std::move(out), {x.node(), gamma.node(), beta.node()},
      [rows, d, xhat = std::move(xhat), inv = std::move(inv)](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const T* g = self.grad.data() + r * d;
          const T* h = xhat.data() + r * d;
          if (pg.requires_grad || pb.requires_grad) {
            for (int64_t c = 0; c < d; ++c) {
              if (pg.requires_grad) pg.grad[size_t(c)] += g[c] * h[c];
              if (pb.requires_grad) pb.grad[size_t(c)] += g[c];
            }
          }
          if (px.requires_grad) {
            // dx = inv * (gg - mean(gg) - xhat * mean(gg*xhat)), gg = g*gamma
            T m1 = 0, m2 = 0;
            for (int64_t c = 0; c < d; ++c) {
              T gg = g[c] * pg.value[size_t(c)];
              m1 += gg;
              m2 += gg * h[c];
            }
            m1 /= T(d);
            m2 /= T(d);
            T iv = inv[size_t(r)];
            for (int64_t c = 0; c < d; ++c) {
              T gg = g[c] * pg.value[size_t(c)];
              px.grad[size_t(r * d + c)] += iv * (gg - m1 - h[c] * m2);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const auto& xn = req(x, "softmax_rows");
  if (xn.shape.empty()) throw ShapeError("softmax_rows needs rank >= 1");
  int64_t d = xn.shape.back();
  if (d == 0) throw ShapeError("softmax_rows over zero-width dim");
  int64_t rows = int64_t(xn.value.size()) / d;
  std::vector<T> out(xn.value.size());
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xn.value.data() + r * d;
    T* orow = out.data() + r * d;
    T m = xr[0];
    for (int64_t c = 1; c < d; ++c) m = std::max(m, xr[c]);
    T s = 0;
    for (int64_t c = 0; c < d; ++c) {
      T e = std::exp(xr[c] - m);
      orow[c] = e;
      s += e;
    }
    T is = T(1) / s;
    for (int64_t c = 0; c < d; ++c) orow[c] *= is;
  }
  flopcount::add(flopcount::cost_activation(int64_t(xn.value.size())));
  return make_op<T>("softmax_rows", xn.shape, std::move(out), {x.node()}, [d](Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    int64_t rows = int64_t(self.value.size()) / d;
    for (int64_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * d;
      const T* g = self.grad.data() + r * d;
      T dot = 0;
      for (int64_t c = 0; c < d; ++c) dot += g[c] * y[c];
      for (int64_t c = 0; c < d; ++c) p.grad[size_t(r * d + c)] += y[c] * (g[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::shared_ptr<const std::vector<int64_t>> index,
                 Shape out_shape) {
  const auto& xn = req(x, "gather");
  if (!index) throw ContractError("gather: null index");
  if (shape_numel(out_shape) != int64_t(index->size()))
    throw ShapeError("gather: index size does not match out shape " + shape_str(out_shape));
  int64_t n = int64_t(xn.value.size());
  std::vector<T> out(index->size());
  for (size_t i = 0; i < index->size(); ++i) {
    int64_t src = (*index)[i];
    if (src < 0 || src >= n)
      throw ContractError("gather: index " + std::to_string(src) + " out of range [0, " +
                          std::to_string(n) + ")");
    out[i] = xn.value[size_t(src)];
  }
  return make_op<T>("gather", std::move(out_shape), std::move(out), {x.node()},
                    [index](Node<T>& self) {
                      auto& p = *self.parents[0];
                      p.ensure_grad();
                      for (size_t i = 0; i < index->size(); ++i)
                        p.grad[size_t((*index)[i])] += self.grad[i];
                    });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int64_t>& rows) {
  const auto& xn = req(x, "gather_rows");
  if (xn.shape.size() != 2)
    throw ShapeError("gather_rows needs a 2-D tensor, got " + shape_str(xn.shape));
  int64_t nrows = xn.shape[0], d = xn.shape[1];
  for (int64_t r : rows)
    if (r < 0 || r >= nrows)
      throw ContractError("gather_rows: row " + std::to_string(r) + " out of range");
  std::vector<T> out(rows.size() * size_t(d));
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xn.value.data() + rows[i] * d, d, out.data() + int64_t(i) * d);
  return make_op<T>("gather_rows", Shape{int64_t(rows.size()), d}, std::move(out), {x.node()},
                    [rows, d](Node<T>& self) {
                      auto& p = *self.parents[0];
                      p.ensure_grad();
                      for (size_t i = 0; i < rows.size(); ++i) {
                        const T* g = self.grad.data() + int64_t(i) * d;
                        T* dst = p.grad.data() + rows[i] * d;
                        for (int64_t c = 0; c < d; ++c) dst[c] += g[c];
                      }
                    });
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& an = req(a, "concat_rows lhs");
  const auto& bn = req(b, "concat_rows rhs");
  if (an.shape.size() != 2 || bn.shape.size() != 2 || an.shape[1] != bn.shape[1])
    throw ShapeError("concat_rows needs 2-D tensors with equal width, got " +
                     shape_str(an.shape) + " and " + shape_str(bn.shape));
  int64_t m = an.shape[0], n = bn.shape[0], d = an.shape[1];
  std::vector<T> out;
  out.reserve(size_t((m + n) * d));
  out.insert(out.end(), an.value.begin(), an.value.end());
  out.insert(out.end(), bn.value.begin(), bn.value.end());
  return make_op<T>("concat_rows", Shape{m + n, d}, std::move(out), {a.node(), b.node()},
                    [m, d](Node<T>& self) {
                      auto& pa = *self.parents[0];
                      auto& pb = *self.parents[1];
                      size_t split = size_t(m * d);
                      if (pa.requires_grad) {
                        pa.ensure_grad();
                        for (size_t i = 0; i < split; ++i) pa.grad[i] += self.grad[i];
                      }
                      if (pb.requires_grad) {
                        pb.ensure_grad();
                        for (size_t i = split; i < self.grad.size(); ++i)
                          pb.grad[i - split] += self.grad[i];
                      }
                    });
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernels) {
  const auto& xn = req(x, "depthwise_conv2d input");
  const auto& kn = req(kernels, "depthwise_conv2d kernels");
  if (xn.shape.size() != 3) throw ShapeError("depthwise_conv2d input must be [C, h, w]");
  if (kn.shape.size() != 3) throw ShapeError("depthwise_conv2d kernels must be [C, k, k]");
  int64_t C = xn.shape[0], h = xn.shape[1], w = xn.shape[2];
  if (kn.shape[0] != C)
    throw ShapeError("depthwise_conv2d: kernel channels " + std::to_string(kn.shape[0]) +
                     " != input channels " + std::to_string(C));
  int64_t k = kn.shape[1];
  if (kn.shape[2] != k) throw ConfigError("depthwise_conv2d kernels must be square");
  if (k % 2 == 0) throw ConfigError("depthwise_conv2d needs an odd kernel size for same padding");
  int64_t p = k / 2;
  std::vector<T> out(xn.value.size(), T(0));
  parallel_for(C, 1, [&](int64_t c) {
    const T* xc = xn.value.data() + c * h * w;
    const T* kc = kn.value.data() + c * k * k;
    T* oc = out.data() + c * h * w;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        T s = 0;
        for (int64_t u = 0; u < k; ++u) {
          int64_t ii = i + u - p;
          if (ii < 0 || ii >= h) continue;
          for (int64_t v = 0; v < k; ++v) {
            int64_t jj = j + v - p;
            if (jj < 0 || jj >= w) continue;
            s += xc[ii * w + jj] * kc[u * k + v];
          }
        }
        oc[i * w + j] = s;
      }
  });
  flopcount::add(flopcount::cost_depthwise(h * w, C, k));
  return make_op<T>(
      "depthwise_conv2d", xn.shape, std::move(out), {x.node(), kernels.node()},
      [C, h, w, k, p](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pk = *self.parents[1];
        if (px.requires_grad) px.ensure_grad();
        if (pk.requires_grad) pk.ensure_grad();
        for (int64_t c = 0; c < C; ++c) {
          const T* g = self.grad.data() + c * h * w;
          const T* xc = px.value.data() + c * h * w;
          const T* kc = pk.value.data() + c * k * k;
          for (int64_t u = 0; u < k; ++u)
            for (int64_t v = 0; v < k; ++v) {
              T dk = 0;
              for (int64_t i = 0; i < h; ++i) {
                int64_t ii = i + u - p;
                if (ii < 0 || ii >= h) continue;
                for (int64_t j = 0; j < w; ++j) {
                  int64_t jj = j + v - p;
                  if (jj < 0 || jj >= w) continue;
                  T gv = g[i * w + j];
                  dk += gv * xc[ii * w + jj];
                  if (px.requires_grad) px.grad[size_t(c * h * w + ii * w + jj)] += gv * kc[u * k + v];
                }
              }
              if (pk.requires_grad) pk.grad[size_t(c * k * k + u * k + v)] += dk;
            }
        }
      });
}

template <typename T>
void backward(const Tensor<T>& loss) {
  const auto& ln = req(loss, "backward loss");
  if (ln.value.size() != 1)
    throw ContractError("backward needs a scalar loss, got shape " + shape_str(ln.shape));
  if (!ln.requires_grad)
    throw ContractError("backward on a graph with no trainable leaves");

  // Post-order DFS along parent edges; reversing gives children-before-parents.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  Node<T>* root = loss.node().get();
  seen.insert(root);
  stack.push_back({root, 0});
  while (!stack.empty()) {
    auto [n, i] = stack.back();
    if (i < n->parents.size()) {
      ++stack.back().second;
      Node<T>* p = n->parents[i].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backprop) continue;
    if (n->grad.empty()) continue;
    if (debug::check_finite())
      detail::check_finite_span<T>({n->grad.data(), n->grad.size()}, *n, "backward");
    n->backprop(*n);
    n->grad.clear();  // op-output grads are transient; leaves keep theirs
    n->grad.shrink_to_fit();
  }
}

// ---- explicit instantiations ------------------------------------------------

namespace detail {
template Tensor<float> make_op<float>(std::string, Shape, std::vector<float>,
                                      std::vector<std::shared_ptr<Node<float>>>,
                                      std::function<void(Node<float>&)>);
template Tensor<double> make_op<double>(std::string, Shape, std::vector<double>,
                                        std::vector<std::shared_ptr<Node<double>>>,
                                        std::function<void(Node<double>&)>);
template void check_finite_value<float>(const Node<float>&, const char*);
template void check_finite_value<double>(const Node<double>&, const char*);
}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;

#define VMSEG_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                         \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                    \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                          \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                     \
  template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> sum<T>(const Tensor<T>&);                                               \
  template Tensor<T> mean<T>(const Tensor<T>&);                                              \
  template Tensor<T> exp<T>(const Tensor<T>&);                                               \
  template Tensor<T> neg<T>(const Tensor<T>&);                                               \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                           \
  template Tensor<T> silu<T>(const Tensor<T>&);                                              \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                          \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                              \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                   double);                                                  \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                      \
  template Tensor<T> gather<T>(const Tensor<T>&, std::shared_ptr<const std::vector<int64_t>>, \
                               Shape);                                                       \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, const std::vector<int64_t>&);          \
  template Tensor<T> concat_rows<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> depthwise_conv2d<T>(const Tensor<T>&, const Tensor<T>&);                \
  template void backward<T>(const Tensor<T>&);

VMSEG_INSTANTIATE_OPS(float)
VMSEG_INSTANTIATE_OPS(double)

#undef VMSEG_INSTANTIATE_OPS

}  // namespace vmseg
