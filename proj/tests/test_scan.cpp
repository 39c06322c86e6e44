#include <doctest.h>

#include <cmath>
#include <vector>

#include "vmseg/flopcount.hpp"
#include "vmseg/gradcheck.hpp"
#include "vmseg/rng.hpp"
#include "vmseg/scan.hpp"

using namespace vmseg;

namespace {

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng, double stddev = 1.0, bool rg = false) {
  std::vector<T> v(size_t(shape_numel(shape)));
  for (auto& x : v) x = T(rng.normal(0.0, stddev));
  return Tensor<T>::from_data(std::move(shape), std::move(v), rg);
}

template <typename T>
Tensor<T> random_delta(int64_t L, int64_t d, Rng& rng, bool rg = false, double lo = 0.05,
                       double hi = 1.05) {
  std::vector<T> v(size_t(L * d));
  for (auto& x : v) x = T(rng.uniform(lo, hi));
  return Tensor<T>::from_data({L, d}, std::move(v), rg);
}

template <typename T>
Tensor<T> random_A(int64_t d, int64_t H, Rng& rng, bool rg = false) {
  std::vector<T> v(size_t(d * H));
  for (auto& x : v) x = T(-rng.uniform(0.3, 2.0));
  return Tensor<T>::from_data({d, H}, std::move(v), rg);
}

template <typename T>
ScanInputs<T> random_inputs(int64_t L, int64_t d, int64_t H, Rng& rng, bool rg = false,
                            bool with_h0 = true) {
  ScanInputs<T> in;
  in.x = randn<T>({L, d}, rng, 1.0, rg);
  in.delta = random_delta<T>(L, d, rng, rg);
  in.B = randn<T>({L, H}, rng, 1.0, rg);
  in.C = randn<T>({L, H}, rng, 1.0, rg);
  if (with_h0) in.h0 = randn<T>({d, H}, rng, 1.0, rg);
  return in;
}

// straight-line restatement of the recurrence, no shared kernels, no threads
template <typename T>
struct NaiveOut {
  std::vector<T> y;
  std::vector<T> h;
};

template <typename T>
NaiveOut<T> naive_scan(const ScanInputs<T>& in, const Tensor<T>& A, const Tensor<T>& D,
                       bool exact) {
  int64_t L = in.x.dim(0), d = in.x.dim(1), H = A.dim(1);
  NaiveOut<T> out;
  out.h.assign(size_t(d * H), T(0));
  if (in.h0.defined()) out.h.assign(in.h0.data().begin(), in.h0.data().end());
  out.y.assign(size_t(L * d), T(0));
  for (int64_t k = 0; k < L; ++k) {
    for (int64_t j = 0; j < d; ++j) {
      T dt = in.delta.data()[size_t(k * d + j)];
      T xk = in.x.data()[size_t(k * d + j)];
      T acc = 0;
      for (int64_t n = 0; n < H; ++n) {
        T a = A.data()[size_t(j * H + n)];
        T abar = std::exp(a * dt);
        T phi = dt;
        if (exact && std::abs(a * dt) >= T(1e-6)) phi = (abar - T(1)) / a;
        T h = abar * out.h[size_t(j * H + n)] + phi * in.B.data()[size_t(k * H + n)] * xk;
        out.h[size_t(j * H + n)] = h;
        acc += in.C.data()[size_t(k * H + n)] * h;
      }
      out.y[size_t(k * d + j)] = acc + D.data()[size_t(j)] * xk;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("discretize hand values") {
  auto dt = Tensor<double>::from_data({1}, {1.0});
  auto A = Tensor<double>::from_data({1, 1}, {-1.0});
  auto B = Tensor<double>::from_data({1}, {1.0});

  auto [abar_e, bbar_e] = discretize(dt, A, B, DiscretizeMode::exact);
  CHECK(abar_e.data()[0] == doctest::Approx(0.36787944117144233).epsilon(1e-15));
  CHECK(bbar_e.data()[0] == doctest::Approx(0.6321205588285577).epsilon(1e-15));

  auto [abar_s, bbar_s] = discretize(dt, A, B, DiscretizeMode::simplified);
  CHECK(abar_s.data()[0] == abar_e.data()[0]);
  CHECK(bbar_s.data()[0] == 1.0);
}

TEST_CASE("discretize zero-step limit") {
  auto dt = Tensor<double>::from_data({2}, {1e-9, 1e-9});
  auto A = Tensor<double>::from_data({2, 2}, {-1, -2, -0.5, -3});
  auto B = Tensor<double>::from_data({2}, {0.7, -1.3});
  for (auto mode : {DiscretizeMode::exact, DiscretizeMode::simplified}) {
    auto [abar, bbar] = discretize(dt, A, B, mode);
    for (auto v : abar.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-8));
    for (auto v : bbar.data()) CHECK(std::abs(v) < 2e-9);
  }
}

TEST_CASE("discretize keeps decay in (0,1) for negative A") {
  Rng rng(2);
  for (int it = 0; it < 50; ++it) {
    int64_t d = 1 + int64_t(rng.uniform_int(4)), H = 1 + int64_t(rng.uniform_int(6));
    std::vector<double> dtv(static_cast<size_t>(d));
    for (auto& v : dtv) v = rng.uniform(1e-3, 3.0);
    auto dt = Tensor<double>::from_data({d}, std::move(dtv));
    auto A = random_A<double>(d, H, rng);
    auto B = randn<double>({H}, rng);
    auto [abar, bbar] = discretize(dt, A, B, DiscretizeMode::exact);
    for (auto v : abar.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("discretize series guard matches the simplified rule") {
  auto dt = Tensor<double>::from_data({1}, {1.0});
  auto A = Tensor<double>::from_data({1, 1}, {-1e-7});
  auto B = Tensor<double>::from_data({1}, {0.83});
  auto [abar_e, bbar_e] = discretize(dt, A, B, DiscretizeMode::exact);
  auto [abar_s, bbar_s] = discretize(dt, A, B, DiscretizeMode::simplified);
  CHECK(bbar_e.data()[0] == bbar_s.data()[0]);
}

TEST_CASE("discretize contract errors") {
  auto dt = Tensor<double>::from_data({1}, {0.0});
  auto A = Tensor<double>::from_data({1, 1}, {-1.0});
  auto B = Tensor<double>::from_data({1}, {1.0});
  CHECK_THROWS_AS((void)discretize(dt, A, B, DiscretizeMode::exact), ContractError);
  auto dt2 = Tensor<double>::from_data({2}, {1.0, 1.0});
  CHECK_THROWS_AS((void)discretize(dt2, A, B, DiscretizeMode::exact), ShapeError);
}

TEST_CASE("scan zero input gives zero output") {
  Rng rng(3);
  ScanInputs<double> in;
  in.x = Tensor<double>::zeros({6, 3});
  in.delta = random_delta<double>(6, 3, rng);
  in.B = randn<double>({6, 5}, rng);
  in.C = randn<double>({6, 5}, rng);
  auto A = random_A<double>(3, 5, rng);
  auto D = randn<double>({3}, rng);
  auto out = scan_recurrence(in, A, D, DiscretizeMode::exact);
  for (auto v : out.y.data()) CHECK(v == 0.0);
  for (auto v : out.h_final.data()) CHECK(v == 0.0);
}

TEST_CASE("scan one-step unrolling") {
  Rng rng(4);
  int64_t d = 3, H = 4;
  ScanInputs<double> in;
  in.x = randn<double>({1, d}, rng);
  in.delta = random_delta<double>(1, d, rng);
  in.B = randn<double>({1, H}, rng);
  in.C = randn<double>({1, H}, rng);
  auto A = random_A<double>(d, H, rng);
  auto D = randn<double>({d}, rng);
  auto out = scan_recurrence(in, A, D, DiscretizeMode::exact);
  std::vector<double> b_row(in.B.data().begin(), in.B.data().end());
  for (int64_t j = 0; j < d; ++j) {
    std::vector<double> dtj = {in.delta.data()[size_t(j)]};
    auto [abar, bbar] = discretize(Tensor<double>::from_data({1}, std::move(dtj)),
                                   Tensor<double>::from_data({1, H},
                                                             {A.data().begin() + j * H,
                                                              A.data().begin() + (j + 1) * H}),
                                   Tensor<double>::from_data({H}, b_row),
                                   DiscretizeMode::exact);
    double y = 0;
    for (int64_t n = 0; n < H; ++n) y += in.C.data()[size_t(n)] * bbar.data()[size_t(n)];
    y = y * in.x.data()[size_t(j)] + D.data()[size_t(j)] * in.x.data()[size_t(j)];
    CHECK(out.y.data()[size_t(j)] == doctest::Approx(y).epsilon(1e-12));
  }
}

TEST_CASE("scan two-step hand value") {
  ScanInputs<double> in;
  in.x = Tensor<double>::from_data({2, 1}, {1, 1});
  in.delta = Tensor<double>::full({2, 1}, 1.0);
  in.B = Tensor<double>::full({2, 1}, 1.0);
  in.C = Tensor<double>::full({2, 1}, 1.0);
  auto A = Tensor<double>::from_data({1, 1}, {-1.0});
  auto D = Tensor<double>::zeros({1});
  auto out = scan_recurrence(in, A, D, DiscretizeMode::simplified);
  CHECK(out.y.data()[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(out.y.data()[1] == doctest::Approx(1.3678794411714423).epsilon(1e-15));
  CHECK(out.h_final.data()[0] == doctest::Approx(1.3678794411714423).epsilon(1e-15));
}

TEST_CASE("scan matches the naive restatement") {
  Rng rng(5);
  for (auto mode : {DiscretizeMode::exact, DiscretizeMode::simplified}) {
    for (int it = 0; it < 20; ++it) {
      int64_t L = 1 + int64_t(rng.uniform_int(32));
      int64_t d = 1 + int64_t(rng.uniform_int(6));
      int64_t H = 1 + int64_t(rng.uniform_int(8));
      auto in = random_inputs<double>(L, d, H, rng);
      auto A = random_A<double>(d, H, rng);
      auto D = randn<double>({d}, rng);
      auto out = scan_recurrence(in, A, D, mode);
      auto ref = naive_scan(in, A, D, mode == DiscretizeMode::exact);
      for (int64_t i = 0; i < L * d; ++i)
        CHECK(out.y.data()[size_t(i)] == doctest::Approx(ref.y[size_t(i)]).epsilon(1e-12));
      for (int64_t i = 0; i < d * H; ++i)
        CHECK(out.h_final.data()[size_t(i)] ==
              doctest::Approx(ref.h[size_t(i)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("matrix form equals the recurrence, both paths") {
  Rng rng(6);
  double worst = 0;
  for (int it = 0; it < 100; ++it) {
    int64_t L = 1 + int64_t(rng.uniform_int(64));
    int64_t d = 1 + int64_t(rng.uniform_int(8));
    int64_t H = 1 + int64_t(rng.uniform_int(16));
    auto in = random_inputs<double>(L, d, H, rng);
    auto A = random_A<double>(d, H, rng);
    auto D = Tensor<double>::zeros({d});
    auto rec = scan_recurrence(in, A, D, DiscretizeMode::simplified);
    auto masked = scan_matrix_form(in, A, DiscretizeMode::simplified, MatrixFormPath::masked);
    auto stream = scan_matrix_form(in, A, DiscretizeMode::simplified, MatrixFormPath::streaming);
    for (int64_t i = 0; i < L * d; ++i) {
      worst = std::max(worst, std::abs(rec.y.data()[size_t(i)] - masked.data()[size_t(i)]));
      worst = std::max(worst, std::abs(rec.y.data()[size_t(i)] - stream.data()[size_t(i)]));
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("matrix form in 32-bit stays within 1e-5") {
  Rng rng(7);
  float worst = 0;
  for (int it = 0; it < 50; ++it) {
    int64_t L = 1 + int64_t(rng.uniform_int(64));
    int64_t d = 1 + int64_t(rng.uniform_int(8));
    int64_t H = 1 + int64_t(rng.uniform_int(16));
    auto in = random_inputs<float>(L, d, H, rng);
    auto A = random_A<float>(d, H, rng);
    auto D = Tensor<float>::zeros({d});
    auto rec = scan_recurrence(in, A, D, DiscretizeMode::simplified);
    auto mf = scan_matrix_form(in, A, DiscretizeMode::simplified);
    for (int64_t i = 0; i < L * d; ++i)
      worst = std::max(worst, std::abs(rec.y.data()[size_t(i)] - mf.data()[size_t(i)]));
  }
  CHECK(worst < 1e-5f);
}

TEST_CASE("matrix form rejects exact mode") {
  Rng rng(8);
  auto in = random_inputs<double>(4, 2, 3, rng);
  auto A = random_A<double>(2, 3, rng);
  CHECK_THROWS_AS((void)scan_matrix_form(in, A, DiscretizeMode::exact), ConfigError);
}

TEST_CASE("cumulative weights hand values and monotonicity") {
  auto dt = Tensor<double>::full({3, 1}, 1.0);
  auto A = Tensor<double>::from_data({1, 1}, {-1.0});
  auto w = cumulative_weights(dt, A);
  CHECK(w.shape() == Shape{3, 1, 1});
  CHECK(w.data()[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(w.data()[1] == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));
  CHECK(w.data()[2] == doctest::Approx(std::exp(-3.0)).epsilon(1e-15));

  Rng rng(9);
  int64_t L = 12, d = 3, H = 4;
  auto dtr = random_delta<double>(L, d, rng);
  auto Ar = random_A<double>(d, H, rng);
  auto wr = cumulative_weights(dtr, Ar);
  for (int64_t j = 0; j < d; ++j) {
    for (int64_t n = 0; n < H; ++n) {
      CHECK(wr.data()[size_t((0 * d + j) * H + n)] ==
            doctest::Approx(std::exp(Ar.data()[size_t(j * H + n)] *
                                     dtr.data()[size_t(j)])).epsilon(1e-12));
      for (int64_t i = 1; i < L; ++i) {
        double prev = wr.data()[size_t(((i - 1) * d + j) * H + n)];
        double cur = wr.data()[size_t((i * d + j) * H + n)];
        CHECK(cur > 0.0);
        CHECK(cur <= prev);
      }
    }
  }
}

TEST_CASE("scan causality") {
  Rng rng(10);
  int64_t L = 16, d = 2, H = 3, k0 = 7;
  auto in = random_inputs<double>(L, d, H, rng);
  auto A = random_A<double>(d, H, rng);
  auto D = randn<double>({d}, rng);
  auto base = scan_recurrence(in, A, D, DiscretizeMode::exact);

  std::vector<double> bumped(in.x.data().begin(), in.x.data().end());
  bumped[size_t(k0 * d)] += 0.5;
  ScanInputs<double> in2 = in;
  in2.x = Tensor<double>::from_data({L, d}, std::move(bumped));
  auto pert = scan_recurrence(in2, A, D, DiscretizeMode::exact);

  for (int64_t k = 0; k < k0; ++k)
    for (int64_t j = 0; j < d; ++j)
      CHECK(pert.y.data()[size_t(k * d + j)] == base.y.data()[size_t(k * d + j)]);
  CHECK(pert.y.data()[size_t(k0 * d)] != base.y.data()[size_t(k0 * d)]);
}

TEST_CASE("scan stability over long sequences") {
  Rng rng(11);
  int64_t L = 10000, d = 2, H = 4;
  auto in = random_inputs<double>(L, d, H, rng);
  auto A = random_A<double>(d, H, rng);
  auto D = randn<double>({d}, rng);
  auto out = scan_recurrence(in, A, D, DiscretizeMode::exact);
  double bound = 0;
  for (auto v : in.h0.data()) bound = std::max(bound, std::abs(v));
  double cap = 0;
  for (int64_t k = 0; k < L; ++k)
    for (int64_t j = 0; j < d; ++j)
      cap = std::max(cap, std::abs(in.x.data()[size_t(k * d + j)]));
  // b_bar is at most max|B| * max(delta); the state is a damped sum
  double bmax = 0;
  for (auto v : in.B.data()) bmax = std::max(bmax, std::abs(v));
  double limit = bound + double(L) * bmax * 1.05 * cap;
  for (auto v : out.h_final.data()) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= limit);
  }
  for (auto v : out.y.data()) CHECK(std::isfinite(v));
}

TEST_CASE("scan is linear in the input sequence") {
  Rng rng(12);
  int64_t L = 10, d = 3, H = 4;
  auto in1 = random_inputs<double>(L, d, H, rng, false, false);
  auto x2 = randn<double>({L, d}, rng);
  auto A = random_A<double>(d, H, rng);
  auto D = randn<double>({d}, rng);
  double alpha = 0.7, beta = -1.3;

  for (auto mode : {DiscretizeMode::exact, DiscretizeMode::simplified}) {
    auto y1 = scan_recurrence(in1, A, D, mode).y;
    ScanInputs<double> inb = in1;
    inb.x = x2;
    auto y2 = scan_recurrence(inb, A, D, mode).y;
    std::vector<double> mix(size_t(L * d));
    for (int64_t i = 0; i < L * d; ++i)
      mix[size_t(i)] = alpha * in1.x.data()[size_t(i)] + beta * x2.data()[size_t(i)];
    ScanInputs<double> inm = in1;
    inm.x = Tensor<double>::from_data({L, d}, std::move(mix));
    auto ym = scan_recurrence(inm, A, D, mode).y;
    for (int64_t i = 0; i < L * d; ++i)
      CHECK(ym.data()[size_t(i)] ==
            doctest::Approx(alpha * y1.data()[size_t(i)] + beta * y2.data()[size_t(i)])
                .epsilon(1e-10));
  }
}

TEST_CASE("scan gradients match finite differences") {
  Rng rng(13);
  for (auto mode : {DiscretizeMode::exact, DiscretizeMode::simplified}) {
    auto in = random_inputs<double>(5, 3, 4, rng, true);
    auto A = random_A<double>(3, 4, rng, true);
    auto D = randn<double>({3}, rng, 1.0, true);
    auto rep = grad_check<double>(
        [&] {
          auto out = scan_recurrence(in, A, D, mode);
          return add(sum(mul(out.y, out.y)), sum(mul(out.h_final, out.h_final)));
        },
        {in.x, in.delta, A, in.B, in.C, D, in.h0}, rng.child(int(mode) + 1), 1e-5, 48);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("scan gradient near the series guard") {
  Rng rng(14);
  ScanInputs<double> in;
  in.x = randn<double>({3, 2}, rng, 1.0, true);
  in.delta = random_delta<double>(3, 2, rng, true, 0.5, 1.0);
  in.B = randn<double>({3, 2}, rng, 1.0, true);
  in.C = randn<double>({3, 2}, rng, 1.0, true);
  auto A = Tensor<double>::from_data({2, 2}, {-2e-4, -1.5, -3e-4, -0.9}, true);
  auto rep = grad_check<double>(
      [&] {
        auto out = scan_recurrence(in, A, Tensor<double>::zeros({2}), DiscretizeMode::exact);
        return sum(mul(out.y, out.y));
      },
      {in.x, in.delta, A, in.B, in.C}, rng.child(1), 1e-6, 40);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("halving delta shrinks the exact-simplified gap fourfold") {
  Rng rng(15);
  int64_t L = 8, d = 2, H = 3;
  auto in = random_inputs<double>(L, d, H, rng, false, false);
  in.delta = random_delta<double>(L, d, rng, false, 0.04, 0.06);
  auto A = random_A<double>(d, H, rng);
  auto D = Tensor<double>::zeros({d});

  auto gap = [&](const ScanInputs<double>& inp) {
    auto ye = scan_recurrence(inp, A, D, DiscretizeMode::exact).y;
    auto ys = scan_recurrence(inp, A, D, DiscretizeMode::simplified).y;
    double g = 0;
    for (int64_t i = 0; i < L * d; ++i)
      g = std::max(g, std::abs(ye.data()[size_t(i)] - ys.data()[size_t(i)]));
    return g;
  };

  double g1 = gap(in);
  std::vector<double> half(in.delta.data().begin(), in.delta.data().end());
  for (auto& v : half) v *= 0.5;
  ScanInputs<double> in2 = in;
  in2.delta = Tensor<double>::from_data({L, d}, std::move(half));
  double g2 = gap(in2);
  double ratio = g1 / g2;
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
}

TEST_CASE("scan results are identical for every thread count") {
  Rng rng(16);
  int64_t L = 64, d = 16, H = 8;
  auto in = random_inputs<double>(L, d, H, rng, true);
  auto A = random_A<double>(d, H, rng, true);
  auto D = randn<double>({d}, rng, 1.0, true);

  auto run = [&](int nt) {
    threads::set_max_threads(nt);
    for (auto& t : {in.x, in.delta, A, in.B, in.C, D, in.h0}) {
      auto tt = t;
      tt.zero_grad();
    }
    auto out = scan_recurrence(in, A, D, DiscretizeMode::exact);
    backward(add(sum(mul(out.y, out.y)), mean(out.h_final)));
    std::vector<double> bits(out.y.data().begin(), out.y.data().end());
    for (auto& t : {in.x, in.delta, A, in.B, in.C, D, in.h0})
      bits.insert(bits.end(), t.grad().begin(), t.grad().end());
    return bits;
  };

  auto one = run(1);
  auto eight = run(8);
  threads::set_max_threads(0);
  REQUIRE(one.size() == eight.size());
  for (size_t i = 0; i < one.size(); ++i) CHECK(one[i] == eight[i]);
}

TEST_CASE("scan flop accounting") {
  Rng rng(17);
  int64_t L = 10, d = 3, H = 4;
  auto in = random_inputs<double>(L, d, H, rng);
  auto A = random_A<double>(d, H, rng);
  auto D = randn<double>({d}, rng);
  flopcount::reset();
  flopcount::enable(true);
  (void)scan_recurrence(in, A, D, DiscretizeMode::exact);
  flopcount::enable(false);
  CHECK(flopcount::total() == flopcount::cost_scan(L, d, H, true));
}

TEST_CASE("scan shape and contract errors") {
  Rng rng(18);
  auto in = random_inputs<double>(4, 2, 3, rng);
  auto A = random_A<double>(2, 3, rng);
  auto D = randn<double>({2}, rng);

  ScanInputs<double> bad = in;
  bad.B = Tensor<double>::zeros({5, 3});
  CHECK_THROWS_AS((void)scan_recurrence(bad, A, D, DiscretizeMode::exact), ShapeError);

  ScanInputs<double> neg = in;
  neg.delta = Tensor<double>::full({4, 2}, -0.1);
  CHECK_THROWS_AS((void)scan_recurrence(neg, A, D, DiscretizeMode::exact), ContractError);

  CHECK_THROWS_AS((void)scan_recurrence(in, A, Tensor<double>::zeros({5}),
                                        DiscretizeMode::exact),
                  ShapeError);
}

TEST_CASE("scan params init invariants") {
  Rng rng(19);
  auto p = ScanParams<double>::init(6, 4, 2, rng);
  CHECK(p.a_log.shape() == Shape{6, 4});
  CHECK(p.D.shape() == Shape{6});
  CHECK(p.dt_down.shape() == Shape{6, 2});
  CHECK(p.dt_up.shape() == Shape{2, 6});

  auto A = p.A();
  for (auto v : A.data()) CHECK(v < 0.0);
  // -A spans [1, H] per state index
  CHECK(A.data()[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(A.data()[3] == doctest::Approx(-4.0).epsilon(1e-12));

  auto xs = randn<double>({10, 6}, rng);
  auto dt = p.delta(xs);
  CHECK(dt.shape() == Shape{10, 6});
  for (auto v : dt.data()) CHECK(v > 0.0);
  CHECK(p.proj_B(xs).shape() == Shape{10, 4});
  CHECK(p.proj_C(xs).shape() == Shape{10, 4});

  int count = 0;
  p.visit("s", [&](const std::string& name, Tensor<double>& t) {
    CHECK(t.requires_grad());
    CHECK(name.rfind("s.", 0) == 0);
    ++count;
  });
  CHECK(count == 7);

  CHECK_THROWS_AS((void)ScanParams<double>::init(0, 4, 1, rng), ConfigError);
}

TEST_CASE("scan params produce usable scan inputs end to end") {
  Rng rng(20);
  auto p = ScanParams<double>::init(4, 3, 1, rng);
  auto xs = randn<double>({9, 4}, rng, 1.0, true);
  ScanInputs<double> in;
  in.x = xs;
  in.delta = p.delta(xs);
  in.B = p.proj_B(xs);
  in.C = p.proj_C(xs);
  auto out = scan_recurrence(in, p.A(), p.D, DiscretizeMode::exact);
  CHECK(out.y.shape() == Shape{9, 4});
  backward(sum(mul(out.y, out.y)));
  CHECK(p.a_log.has_grad());
  CHECK(p.wb.has_grad());
  CHECK(p.dt_bias.has_grad());
  CHECK(xs.has_grad());
}
