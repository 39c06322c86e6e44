#include <benchmark/benchmark.h>

#include "vmseg/rng.hpp"
#include "vmseg/scan.hpp"
#include "vmseg/ss2d.hpp"
#include "vmseg/vmunet.hpp"

using namespace vmseg;

namespace {

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng, bool rg = false) {
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = T(rng.normal());
  return Tensor<T>::from_data(std::move(shape), std::move(v), rg);
}

template <typename T>
ScanInputs<T> scan_instance(int64_t L, int64_t d, int64_t H, Rng& rng, bool rg) {
  ScanInputs<T> inp;
  inp.x = randn<T>({L, d}, rng, rg);
  auto dv = std::vector<T>(static_cast<size_t>(L * d));
  for (auto& x : dv) x = T(0.05) + T(rng.uniform());
  inp.delta = Tensor<T>::from_data({L, d}, std::move(dv), rg);
  inp.B = randn<T>({L, H}, rng, rg);
  inp.C = randn<T>({L, H}, rng, rg);
  return inp;
}

template <typename T>
Tensor<T> neg_A(int64_t d, int64_t H, Rng& rng, bool rg = false) {
  auto a = std::vector<T>(static_cast<size_t>(d * H));
  for (auto& x : a) x = -T(0.3) - T(rng.uniform());
  return Tensor<T>::from_data({d, H}, std::move(a), rg);
}

void bm_scan_recurrence(benchmark::State& state) {
  int64_t L = state.range(0);
  const int64_t d = 96, H = 16;
  Rng rng(1);
  auto inp = scan_instance<float>(L, d, H, rng, false);
  auto A = neg_A<float>(d, H, rng);
  auto D = Tensor<float>::full({d}, 1.0f);
  for (auto _ : state) {
    auto out = scan_recurrence(inp, A, D, DiscretizeMode::exact);
    benchmark::DoNotOptimize(out.y.data().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * L * d * H);
}

void bm_scan_backward(benchmark::State& state) {
  int64_t L = state.range(0);
  const int64_t d = 96, H = 16;
  Rng rng(2);
  auto inp = scan_instance<float>(L, d, H, rng, true);
  auto A = neg_A<float>(d, H, rng, true);
  auto D = Tensor<float>::full({d}, 1.0f, true);
  for (auto _ : state) {
    auto out = scan_recurrence(inp, A, D, DiscretizeMode::exact);
    auto loss = sum(out.y);
    backward(loss);
    inp.x.zero_grad();
    inp.delta.zero_grad();
    inp.B.zero_grad();
    inp.C.zero_grad();
    A.zero_grad();
    D.zero_grad();
    benchmark::DoNotOptimize(loss.data().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * L * d * H);
}

void bm_scan_matrix_form(benchmark::State& state) {
  int64_t L = state.range(0);
  const int64_t d = 96, H = 16;
  Rng rng(3);
  auto inp = scan_instance<float>(L, d, H, rng, false);
  auto A = neg_A<float>(d, H, rng);
  for (auto _ : state) {
    auto y = scan_matrix_form(inp, A, DiscretizeMode::simplified);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * L * d * H);
}

void bm_ss2d(benchmark::State& state) {
  int64_t hw = state.range(0);
  Rng rng(4);
  Ss2dConfig cfg;
  cfg.d = 96;
  cfg.H = 16;
  auto op = Ss2d<float>::init(cfg, rng);
  auto fm = randn<float>({96, hw, hw}, rng);
  for (auto _ : state) {
    auto out = op.forward(fm);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 96 * hw * hw);
}

void bm_vmunet_tiny(benchmark::State& state) {
  int64_t res = state.range(0);
  Rng rng(5);
  auto cfg = VMUNetConfig::tiny();
  cfg.in_h = res;
  cfg.in_w = res;
  auto net = VMUNet<float>::init(cfg, rng);
  auto image = randn<float>({3, res, res}, rng);
  for (auto _ : state) {
    auto out = net.forward(image);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * res * res);
}

}  // namespace

BENCHMARK(bm_scan_recurrence)->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(bm_scan_backward)->Arg(256)->Arg(1024);
BENCHMARK(bm_scan_matrix_form)->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(bm_ss2d)->Arg(16)->Arg(32)->Arg(56);
BENCHMARK(bm_vmunet_tiny)->Arg(64)->Arg(128);
