#include <doctest.h>

#include <cmath>
#include <vector>

#include "vmseg/flopcount.hpp"
#include "vmseg/gradcheck.hpp"
#include "vmseg/rng.hpp"
#include "vmseg/tensor.hpp"

using namespace vmseg;

namespace {

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng, double stddev = 1.0, bool rg = true) {
  std::vector<T> v(size_t(shape_numel(shape)));
  for (auto& x : v) x = T(rng.normal(0.0, stddev));
  return Tensor<T>::from_data(std::move(shape), std::move(v), rg);
}

}  // namespace

TEST_CASE("matmul hand values") {
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_data({2, 1}, {0, 1});
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.data()[0] == doctest::Approx(2).epsilon(1e-12));
  CHECK(c.data()[1] == doctest::Approx(4).epsilon(1e-12));

  auto eye = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  auto m = matmul(eye, a);
  for (int i = 0; i < 4; ++i) CHECK(m.data()[i] == a.data()[i]);
}

TEST_CASE("matmul shape errors") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({2, 3});
  CHECK_THROWS_AS((void)matmul(a, b), ShapeError);
  auto v = Tensor<float>::zeros({3});
  CHECK_THROWS_AS((void)matmul(a, v), ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(42);
  auto a = randn<double>({3, 4}, rng);
  auto b = randn<double>({4, 2}, rng);
  auto rep = grad_check<double>(
      [&] { return sum(mul(matmul(a, b), matmul(a, b))); }, {a, b}, rng.child(1));
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("layer_norm hand values and moments") {
  auto x = Tensor<double>::from_data({1, 2}, {1, 3});
  auto gamma = Tensor<double>::full({2}, 1.0);
  auto beta = Tensor<double>::zeros({2});
  auto y = layer_norm(x, gamma, beta, 1e-12);
  CHECK(y.data()[0] == doctest::Approx(-1).epsilon(1e-6));
  CHECK(y.data()[1] == doctest::Approx(1).epsilon(1e-6));

  // constant input -> zeros (variance guard keeps it finite)
  auto c = Tensor<double>::full({3, 4}, 2.5);
  auto g4 = Tensor<double>::full({4}, 1.0);
  auto b4 = Tensor<double>::zeros({4});
  auto yc = layer_norm(c, g4, b4);
  for (auto v : yc.data()) CHECK(v == doctest::Approx(0).epsilon(1e-12));

  Rng rng(7);
  auto r = randn<double>({5, 8}, rng);
  auto yr = layer_norm(r, Tensor<double>::full({8}, 1.0), Tensor<double>::zeros({8}), 1e-12);
  for (int row = 0; row < 5; ++row) {
    double mu = 0, var = 0;
    for (int c2 = 0; c2 < 8; ++c2) mu += yr.data()[row * 8 + c2];
    mu /= 8;
    for (int c2 = 0; c2 < 8; ++c2) {
      double t = yr.data()[row * 8 + c2] - mu;
      var += t * t;
    }
    var /= 8;
    CHECK(mu == doctest::Approx(0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1).epsilon(1e-6));
  }
}

TEST_CASE("layer_norm gradient vs finite differences") {
  Rng rng(3);
  auto x = randn<double>({4, 6}, rng);
  auto gamma = randn<double>({6}, rng, 0.5);
  auto beta = randn<double>({6}, rng, 0.5);
  auto rep = grad_check<double>(
      [&] {
        auto y = layer_norm(x, gamma, beta);
        return sum(mul(y, y));
      },
      {x, gamma, beta}, rng.child(1));
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("layer_norm zero-width errors") {
  auto x = Tensor<float>::zeros({4, 0});
  auto g = Tensor<float>::zeros({0});
  CHECK_THROWS_AS((void)layer_norm(x, g, g), ShapeError);
}

TEST_CASE("silu values and asymptotes") {
  auto x = Tensor<double>::from_data({3}, {0.0, 10.0, -10.0});
  auto y = silu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(std::abs(y.data()[1] - 10.0) < 5e-4);
  CHECK(std::abs(y.data()[2]) < 5e-4);
}

TEST_CASE("silu gradient at several points") {
  auto x = Tensor<double>::from_data({4}, {-2.0, -0.5, 0.5, 2.0}, true);
  Rng rng(1);
  auto rep = grad_check<double>([&] { return sum(silu(x)); }, {x}, rng);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("sigmoid softplus exp neg gradients") {
  Rng rng(11);
  auto x = randn<double>({2, 5}, rng);
  auto rep = grad_check<double>(
      [&] { return sum(mul(sigmoid(x), add(softplus(x), exp(neg(x))))); }, {x}, rng.child(1));
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("softplus saturation is stable") {
  auto x = Tensor<float>::from_data({2}, {100.0f, -100.0f});
  auto y = softplus(x);
  CHECK(y.data()[0] == doctest::Approx(100.0f));
  CHECK(y.data()[1] == doctest::Approx(0.0f));
}

TEST_CASE("softmax rows") {
  auto x = Tensor<double>::from_data({2, 3}, {1, 1, 1, 1000, 1001, 1002});
  auto y = softmax_rows(x);
  for (int c = 0; c < 3; ++c) CHECK(y.data()[c] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  double s = y.data()[3] + y.data()[4] + y.data()[5];
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));  // max subtraction keeps huge logits finite
  CHECK(y.data()[5] > y.data()[4]);

  Rng rng(5);
  auto r = randn<double>({3, 4}, rng);
  auto rep = grad_check<double>(
      [&] {
        auto p = softmax_rows(r);
        return sum(mul(p, p));
      },
      {r}, rng.child(1));
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("depthwise conv identity and window sums") {
  // delta kernel reproduces the input
  auto x = Tensor<double>::from_data({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto k = Tensor<double>::from_data({1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  auto y = depthwise_conv2d(x, k);
  for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == x.data()[i]);

  // all-ones kernel on all-ones 5x5 input: 9 in the interior, fewer at the border
  auto x5 = Tensor<double>::full({1, 5, 5}, 1.0);
  auto k3 = Tensor<double>::full({1, 3, 3}, 1.0);
  auto y5 = depthwise_conv2d(x5, k3);
  CHECK(y5.data()[2 * 5 + 2] == 9);
  CHECK(y5.data()[0] == 4);
  CHECK(y5.data()[2] == 6);
}

TEST_CASE("depthwise conv channels stay independent") {
  Rng rng(9);
  auto x = randn<double>({2, 4, 4}, rng);
  auto k = randn<double>({2, 3, 3}, rng);
  auto y = depthwise_conv2d(x, k);

  // zeroing channel 1's kernel must not change channel 0's output
  std::vector<double> k0(k.data().begin(), k.data().end());
  for (int i = 9; i < 18; ++i) k0[size_t(i)] = 0;
  auto y2 = depthwise_conv2d(x, Tensor<double>::from_data({2, 3, 3}, std::move(k0)));
  for (int i = 0; i < 16; ++i) CHECK(y.data()[i] == y2.data()[i]);
}

TEST_CASE("depthwise conv gradient vs finite differences") {
  Rng rng(13);
  auto x = randn<double>({2, 4, 5}, rng);
  auto k = randn<double>({2, 3, 3}, rng);
  auto rep = grad_check<double>(
      [&] {
        auto y = depthwise_conv2d(x, k);
        return sum(mul(y, y));
      },
      {x, k}, rng.child(1), 1e-5, 40);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("depthwise conv config errors") {
  auto x = Tensor<float>::zeros({2, 4, 4});
  CHECK_THROWS_AS((void)depthwise_conv2d(x, Tensor<float>::zeros({2, 2, 2})), ConfigError);
  CHECK_THROWS_AS((void)depthwise_conv2d(x, Tensor<float>::zeros({3, 3, 3})), ShapeError);
}

TEST_CASE("sum and mean backward") {
  auto x = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4}, true);
  backward(sum(x));
  for (auto g : x.grad()) CHECK(g == 1.0);
  x.zero_grad();
  backward(mean(x));
  for (auto g : x.grad()) CHECK(g == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("grad of sum(x*x)/2 is x") {
  Rng rng(21);
  auto x = randn<double>({3, 3}, rng);
  backward(scale(sum(mul(x, x)), 0.5));
  for (int i = 0; i < 9; ++i) CHECK(x.grad()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("diamond reuse accumulates both paths once each") {
  auto x = Tensor<double>::from_data({3}, {1, 2, 3}, true);
  auto y = mul(x, x);
  backward(sum(add(y, y)));  // d/dx 2*x^2 = 4x
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(4 * x.data()[i]).epsilon(1e-12));
}

TEST_CASE("backward contract errors") {
  auto x = Tensor<double>::from_data({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(x, x)), ContractError);  // non-scalar loss
  auto frozen = Tensor<double>::from_data({2}, {1, 2}, false);
  CHECK_THROWS_AS(backward(sum(frozen)), ContractError);  // nothing trainable
}

TEST_CASE("op outputs are immutable") {
  auto x = Tensor<float>::from_data({2}, {1, 2}, true);
  auto y = silu(x);
  CHECK_THROWS_AS((void)y.mut_data(), ContractError);
  CHECK_NOTHROW((void)x.mut_data());
}

TEST_CASE("gather with duplicate indices scatter-adds") {
  auto x = Tensor<double>::from_data({3}, {10, 20, 30}, true);
  auto idx = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{0, 0, 2});
  auto y = gather(x, idx, {3});
  CHECK(y.data()[0] == 10);
  CHECK(y.data()[1] == 10);
  CHECK(y.data()[2] == 30);
  backward(sum(y));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 1.0);

  auto bad = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{5});
  CHECK_THROWS_AS((void)gather(x, bad, {1}), ContractError);
}

TEST_CASE("gather_rows round trip with inverse permutation") {
  Rng rng(31);
  auto x = randn<double>({6, 3}, rng);
  std::vector<int64_t> perm{3, 1, 5, 0, 4, 2};
  std::vector<int64_t> inv(6);
  for (int i = 0; i < 6; ++i) inv[size_t(perm[size_t(i)])] = i;
  auto y = gather_rows(gather_rows(x, perm), inv);
  for (int i = 0; i < 18; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("transpose reshape concat round trips and grads") {
  Rng rng(17);
  auto a = randn<double>({2, 3}, rng);
  auto b = randn<double>({4, 3}, rng);
  auto t = transpose(transpose(a));
  for (int i = 0; i < 6; ++i) CHECK(t.data()[i] == a.data()[i]);

  auto cat = concat_rows(a, b);
  CHECK(cat.shape() == Shape{6, 3});
  auto rep = grad_check<double>(
      [&] { return sum(mul(concat_rows(transpose(transpose(a)), b), concat_rows(a, b))); },
      {a, b}, rng.child(1));
  CHECK(rep.max_rel_err < 1e-6);

  CHECK_THROWS_AS((void)reshape(a, Shape{5}), ShapeError);
  CHECK_THROWS_AS((void)concat_rows(a, Tensor<double>::zeros({2, 4})), ShapeError);
}

TEST_CASE("add_bias broadcasts over rows") {
  auto x = Tensor<double>::from_data({2, 3}, {0, 0, 0, 1, 1, 1}, true);
  auto b = Tensor<double>::from_data({3}, {1, 2, 3}, true);
  auto y = add_bias(x, b);
  CHECK(y.data()[0] == 1);
  CHECK(y.data()[5] == 4);
  backward(sum(y));
  for (auto g : b.grad()) CHECK(g == 2.0);
}

TEST_CASE("finite check names the offending node") {
  debug::set_check_finite(true);
  auto x = Tensor<double>::from_data({1}, {1000.0}, true);
  try {
    auto y = exp(x);  // overflows to inf
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    std::string msg = e.what();
    CHECK(msg.find("exp") != std::string::npos);
    CHECK(msg.find("node #") != std::string::npos);
  }
  debug::set_check_finite(false);
  CHECK_NOTHROW((void)exp(x));  // opt-in only
}

TEST_CASE("forward is deterministic bit for bit") {
  Rng rng(77);
  auto a = randn<float>({8, 8}, rng);
  auto b = randn<float>({8, 8}, rng);
  auto f = [&] { return silu(matmul(layer_norm(a, Tensor<float>::full({8}, 1.0f),
                                               Tensor<float>::zeros({8})),
                                    b)); };
  auto y1 = f();
  auto y2 = f();
  for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[size_t(i)] == y2.data()[size_t(i)]);
}

TEST_CASE("flop counter matches matmul cost") {
  flopcount::reset();
  flopcount::enable(true);
  auto a = Tensor<float>::zeros({3, 4});
  auto b = Tensor<float>::zeros({4, 5});
  (void)matmul(a, b);
  flopcount::enable(false);
  CHECK(flopcount::total() == flopcount::cost_matmul(3, 4, 5));
}

TEST_CASE("div values and gradients") {
  auto a = Tensor<double>::from_data({3}, {6, -4, 1});
  auto b = Tensor<double>::from_data({3}, {2, 4, -8});
  auto q = div(a, b);
  CHECK(q.data()[0] == 3.0);
  CHECK(q.data()[1] == -1.0);
  CHECK(q.data()[2] == -0.125);
  CHECK_THROWS_AS((void)div(a, Tensor<double>::zeros({4})), ShapeError);

  Rng rng(61);
  auto x = randn<double>({2, 3}, rng);
  auto y = randn<double>({2, 3}, rng);
  for (auto& v : y.mut_data()) v += (v >= 0 ? 2.0 : -2.0);
  auto rep = grad_check<double>([&] { return sum(mul(div(x, y), div(x, y))); }, {x, y},
                                rng.child(1));
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("add_scalar shifts and passes gradients through") {
  auto a = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto s = add_scalar(a, -1.5);
  CHECK(s.data()[0] == -0.5);
  CHECK(s.data()[3] == 2.5);

  Rng rng(62);
  auto x = randn<double>({5}, rng);
  auto rep = grad_check<double>(
      [&] {
        auto t = add_scalar(x, 0.25);
        return sum(mul(t, t));
      },
      {x}, rng.child(1));
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gelu values and gradients") {
  auto x = Tensor<double>::from_data({3}, {0.0, 10.0, -10.0});
  auto y = gelu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(std::abs(y.data()[2]) < 1e-8);

  Rng rng(63);
  auto z = randn<double>({2, 4}, rng);
  auto rep = grad_check<double>([&] { return sum(mul(gelu(z), gelu(z))); }, {z}, rng.child(1));
  CHECK(rep.max_rel_err < 1e-6);
}
