#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "vmseg/baselines.hpp"
#include "vmseg/errors.hpp"
#include "vmseg/gradcheck.hpp"
#include "vmseg/rng.hpp"

using namespace vmseg;

namespace {

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng, double stddev = 1.0, bool rg = false) {
  std::vector<T> v(size_t(shape_numel(shape)));
  for (auto& x : v) x = T(rng.normal(0.0, stddev));
  return Tensor<T>::from_data(std::move(shape), std::move(v), rg);
}

// quadruple-loop valid cross-correlation
std::vector<double> conv_ref(const std::vector<double>& img, int64_t M, int64_t N,
                             const std::vector<double>& ker, int64_t m, int64_t n) {
  int64_t Mo = M - m + 1, No = N - n + 1;
  std::vector<double> out(size_t(Mo * No), 0.0);
  for (int64_t i = 0; i < Mo; ++i)
    for (int64_t j = 0; j < No; ++j)
      for (int64_t a = 0; a < m; ++a)
        for (int64_t b = 0; b < n; ++b)
          out[size_t(i * No + j)] += img[size_t((i + a) * N + (j + b))] * ker[size_t(a * n + b)];
  return out;
}

}  // namespace

TEST_CASE("conv2d_valid matches a hand-worked example") {
  auto img = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto ker = Tensor<double>::from_data({2, 2}, {1, 1, 1, 1});
  auto out = conv2d_valid(img, ker);
  REQUIRE(out.shape() == Shape{1, 1});
  CHECK(out.data()[0] == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("conv2d_valid with a 1x1 kernel scales the image") {
  Rng rng(41);
  auto img = randn<double>({5, 7}, rng);
  auto ker = Tensor<double>::from_data({1, 1}, {-2.5});
  auto out = conv2d_valid(img, ker);
  REQUIRE(out.shape() == Shape{5, 7});
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[size_t(i)] == doctest::Approx(-2.5 * img.data()[size_t(i)]).epsilon(1e-12));
}

TEST_CASE("conv2d_valid matches the quadruple-loop reference") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    int64_t M = 1 + rng.uniform_int(8), N = 1 + rng.uniform_int(8);
    int64_t m = 1 + rng.uniform_int(M), n = 1 + rng.uniform_int(N);
    auto img = randn<double>({M, N}, rng);
    auto ker = randn<double>({m, n}, rng);
    auto out = conv2d_valid(img, ker);
    REQUIRE(out.shape() == Shape{M - m + 1, N - n + 1});
    auto ref = conv_ref({img.data().begin(), img.data().end()}, M, N,
                        {ker.data().begin(), ker.data().end()}, m, n);
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(out.data()[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }
}

TEST_CASE("conv2d_valid rejects kernels larger than the image") {
  Rng rng(43);
  auto img = randn<double>({3, 3}, rng);
  CHECK_THROWS_AS(conv2d_valid(img, randn<double>({4, 2}, rng)), ShapeError);
  CHECK_THROWS_AS(conv2d_valid(img, randn<double>({2, 5}, rng)), ShapeError);
  CHECK_THROWS_AS(conv2d_valid(randn<double>({3}, rng), randn<double>({2, 2}, rng)), ShapeError);
}

TEST_CASE("conv2d_valid gradients match finite differences") {
  Rng rng(44);
  auto img = randn<double>({4, 5}, rng, 1.0, true);
  auto ker = randn<double>({2, 3}, rng, 1.0, true);
  auto weights = randn<double>({3, 3}, rng);
  auto rep = grad_check<double>(
      [&] { return sum(mul(conv2d_valid(img, ker), weights)); }, {img, ker}, rng.child(1));
  CHECK_MESSAGE(rep.max_rel_err < 1e-7, rep.worst);
}

TEST_CASE("vit_embed produces a class token plus one token per patch") {
  Rng rng(45);
  int64_t p = 4, S = 12, width = 6;
  int64_t N = (S / p) * (S / p);
  auto image = randn<double>({3, S, S}, rng);
  auto proj = randn<double>({3 * p * p, width}, rng);
  auto pos = randn<double>({N + 1, width}, rng);
  auto cls = randn<double>({1, width}, rng);
  auto z = vit_embed(image, p, proj, pos, cls);
  CHECK(z.shape() == Shape{N + 1, width});
}

TEST_CASE("vit_embed on a zero image leaves the class token plus positions") {
  Rng rng(46);
  int64_t p = 2, S = 4, width = 5;
  int64_t N = (S / p) * (S / p);
  auto image = Tensor<double>::zeros({3, S, S});
  auto proj = randn<double>({3 * p * p, width}, rng);
  auto pos = randn<double>({N + 1, width}, rng);
  auto cls = randn<double>({1, width}, rng);
  auto z = vit_embed(image, p, proj, pos, cls);
  for (int64_t j = 0; j < width; ++j)
    CHECK(z.data()[size_t(j)] ==
          doctest::Approx(cls.data()[size_t(j)] + pos.data()[size_t(j)]).epsilon(1e-12));
  for (int64_t i = 1; i <= N; ++i)
    for (int64_t j = 0; j < width; ++j)
      CHECK(z.data()[size_t(i * width + j)] ==
            doctest::Approx(pos.data()[size_t(i * width + j)]).epsilon(1e-12));
}

TEST_CASE("vit_embed tokens depend only on their own patch") {
  Rng rng(47);
  int64_t p = 4, S = 8, width = 3;
  auto proj = randn<double>({3 * p * p, width}, rng);
  auto pos = Tensor<double>::zeros({5, width});
  auto cls = randn<double>({1, width}, rng);
  auto image = randn<double>({3, S, S}, rng);
  auto base = vit_embed(image, p, proj, pos, cls);

  // perturb only the bottom-right patch; tokens 1..3 must not move
  auto bumped = image.data();
  std::vector<double> img2(bumped.begin(), bumped.end());
  for (int64_t ch = 0; ch < 3; ++ch)
    for (int64_t r = p; r < S; ++r)
      for (int64_t c = p; c < S; ++c) img2[size_t(ch * S * S + r * S + c)] += 1.0;
  auto moved = vit_embed(Tensor<double>::from_data({3, S, S}, std::move(img2)), p, proj, pos, cls);
  for (int64_t i = 0; i < 4 * width; ++i)
    CHECK(moved.data()[size_t(i)] == doctest::Approx(base.data()[size_t(i)]).epsilon(1e-12));
  bool changed = false;
  for (int64_t j = 0; j < width; ++j)
    changed |= std::abs(moved.data()[size_t(4 * width + j)] - base.data()[size_t(4 * width + j)]) >
               1e-9;
  CHECK(changed);
}

TEST_CASE("vit_embed validates its inputs") {
  Rng rng(48);
  auto proj = randn<double>({48, 4}, rng);
  auto pos = randn<double>({10, 4}, rng);
  auto cls = randn<double>({1, 4}, rng);
  CHECK_NOTHROW(vit_embed(randn<double>({3, 12, 12}, rng), 4, proj, pos, cls));
  CHECK_THROWS_AS(vit_embed(randn<double>({3, 10, 12}, rng), 4, proj, pos, cls), ConfigError);
  CHECK_THROWS_AS(vit_embed(randn<double>({3, 12, 12}, rng), 4, proj,
                            randn<double>({9, 4}, rng), cls),
                  ShapeError);
  CHECK_THROWS_AS(vit_embed(randn<double>({3, 12, 12}, rng), 4, randn<double>({47, 4}, rng),
                            pos, cls),
                  ShapeError);
}

TEST_CASE("attention with a single query returns the value row") {
  Rng rng(49);
  auto q = randn<double>({1, 4}, rng);
  auto k = randn<double>({1, 4}, rng);
  auto v = randn<double>({1, 6}, rng);
  auto out = attention(q, k, v, 4);
  REQUIRE(out.shape() == Shape{1, 6});
  for (int64_t j = 0; j < 6; ++j)
    CHECK(out.data()[size_t(j)] == doctest::Approx(v.data()[size_t(j)]).epsilon(1e-12));
}

TEST_CASE("attention with zero scores averages the values uniformly") {
  Rng rng(50);
  int64_t L = 5, dk = 3, dv = 4;
  auto q = Tensor<double>::zeros({L, dk});
  auto k = randn<double>({L, dk}, rng);
  auto v = randn<double>({L, dv}, rng);
  auto out = attention(q, k, v, dk);
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = 0; j < dv; ++j) {
      double mean = 0;
      for (int64_t t = 0; t < L; ++t) mean += v.data()[size_t(t * dv + j)];
      mean /= double(L);
      CHECK(out.data()[size_t(i * dv + j)] == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("attention weights form a distribution over keys") {
  Rng rng(51);
  for (int trial = 0; trial < 10; ++trial) {
    int64_t L = 1 + rng.uniform_int(6), dk = 1 + rng.uniform_int(5);
    auto q = randn<double>({L, dk}, rng, 2.0);
    auto k = randn<double>({L, dk}, rng, 2.0);
    // with V = I the output rows are the attention weights themselves
    auto v = Tensor<double>::zeros({L, L});
    {
      std::vector<double> eye(size_t(L * L), 0.0);
      for (int64_t i = 0; i < L; ++i) eye[size_t(i * L + i)] = 1.0;
      v = Tensor<double>::from_data({L, L}, std::move(eye));
    }
    auto w = attention(q, k, v, dk);
    for (int64_t i = 0; i < L; ++i) {
      double row = 0;
      for (int64_t j = 0; j < L; ++j) {
        double a = w.data()[size_t(i * L + j)];
        CHECK(a >= 0.0);
        row += a;
      }
      CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("attention is invariant to per-row score shifts") {
  Rng rng(52);
  int64_t L = 4, dk = 3, dv = 5;
  auto q = randn<double>({L, dk}, rng);
  auto k = randn<double>({L, dk}, rng);
  auto v = randn<double>({L, dv}, rng);
  auto base = attention(q, k, v, dk);

  // adding the same vector to every key row shifts each score row by a
  // constant (q_i . w), which softmax must cancel
  auto wvec = randn<double>({dk}, rng);
  std::vector<double> shifted(k.data().begin(), k.data().end());
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = 0; j < dk; ++j) shifted[size_t(i * dk + j)] += wvec.data()[size_t(j)];
  auto out = attention(q, Tensor<double>::from_data({L, dk}, std::move(shifted)), v, dk);
  for (int64_t i = 0; i < base.numel(); ++i)
    CHECK(out.data()[size_t(i)] == doctest::Approx(base.data()[size_t(i)]).epsilon(1e-9));
}

TEST_CASE("attention validates shapes") {
  Rng rng(53);
  auto q = randn<double>({4, 3}, rng);
  auto k = randn<double>({4, 3}, rng);
  auto v = randn<double>({4, 5}, rng);
  CHECK_THROWS_AS(attention(q, randn<double>({4, 2}, rng), v, 3), ShapeError);
  CHECK_THROWS_AS(attention(q, k, randn<double>({3, 5}, rng), 3), ShapeError);
  CHECK_THROWS_AS(attention(q, k, v, 2), ShapeError);
}

TEST_CASE("vit_block with zero output maps is the identity") {
  Rng rng(54);
  auto blk = ViTBlockParams<double>::init(6, 12, rng);
  for (auto* t : {&blk.wo.w, &blk.wo.b, &blk.fc2.w, &blk.fc2.b})
    std::fill(t->mut_data().begin(), t->mut_data().end(), 0.0);
  auto z = randn<double>({5, 6}, rng);
  auto out = blk.forward(z);
  for (int64_t i = 0; i < z.numel(); ++i)
    CHECK(out.data()[size_t(i)] == doctest::Approx(z.data()[size_t(i)]).epsilon(1e-12));
}

TEST_CASE("vit_block preserves token shape") {
  Rng rng(55);
  for (int trial = 0; trial < 5; ++trial) {
    int64_t L = 1 + rng.uniform_int(7), width = 2 + rng.uniform_int(6);
    auto blk = ViTBlockParams<double>::init(width, 2 * width, rng);
    auto z = randn<double>({L, width}, rng);
    CHECK(blk.forward(z).shape() == Shape{L, width});
    CHECK_THROWS_AS(blk.forward(randn<double>({L, width + 1}, rng)), ShapeError);
  }
}

TEST_CASE("vit_block is equivariant under token permutation") {
  Rng rng(56);
  int64_t L = 6, width = 4;
  auto blk = ViTBlockParams<double>::init(width, 8, rng);
  auto z = randn<double>({L, width}, rng);
  std::vector<int64_t> perm(static_cast<size_t>(L));
  std::iota(perm.begin(), perm.end(), 0);
  for (int64_t i = L - 1; i > 0; --i)
    std::swap(perm[size_t(i)], perm[size_t(rng.uniform_int(i + 1))]);
  auto direct = gather_rows(blk.forward(z), perm);
  auto permuted = blk.forward(gather_rows(z, perm));
  for (int64_t i = 0; i < direct.numel(); ++i)
    CHECK(permuted.data()[size_t(i)] ==
          doctest::Approx(direct.data()[size_t(i)]).epsilon(1e-10));
}

TEST_CASE("vit_block gradients match finite differences") {
  Rng rng(57);
  auto blk = ViTBlockParams<double>::init(4, 6, rng);
  auto z = randn<double>({3, 4}, rng, 1.0, true);
  std::vector<Tensor<double>> inputs = {z,      blk.wq.w, blk.wo.b, blk.fc1.w,
                                        blk.fc2.b, blk.norm1.g, blk.norm2.b};
  auto rep = grad_check<double>(
      [&] {
        auto out = blk.forward(z);
        return sum(mul(out, out));
      },
      inputs, rng.child(1), 1e-5, 30);
  CHECK_MESSAGE(rep.max_rel_err < 1e-4, rep.worst);
}
