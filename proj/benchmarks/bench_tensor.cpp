#include <benchmark/benchmark.h>

#include "vmseg/rng.hpp"
#include "vmseg/tensor.hpp"

using namespace vmseg;

namespace {

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng) {
  std::vector<T> v(size_t(shape_numel(shape)));
  for (auto& x : v) x = T(rng.normal());
  return Tensor<T>::from_data(std::move(shape), std::move(v), false);
}

void bm_matmul(benchmark::State& state) {
  int64_t n = state.range(0);
  Rng rng(1);
  auto a = randn<float>({n, n}, rng);
  auto b = randn<float>({n, n}, rng);
  for (auto _ : state) {
    auto c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 2 * n * n * n);
}

void bm_layer_norm(benchmark::State& state) {
  int64_t rows = state.range(0);
  Rng rng(2);
  auto x = randn<float>({rows, 96}, rng);
  auto g = Tensor<float>::full({96}, 1.0f);
  auto b = Tensor<float>::zeros({96});
  for (auto _ : state) {
    auto y = layer_norm(x, g, b);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * rows * 96);
}

void bm_depthwise(benchmark::State& state) {
  int64_t hw = state.range(0);
  Rng rng(3);
  auto x = randn<float>({96, hw, hw}, rng);
  auto k = randn<float>({96, 3, 3}, rng);
  for (auto _ : state) {
    auto y = depthwise_conv2d(x, k);
    benchmark::DoNotOptimize(y.data().data());
  }
}

}  // namespace

BENCHMARK(bm_matmul)->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(bm_layer_norm)->Arg(1024)->Arg(12544);
BENCHMARK(bm_depthwise)->Arg(28)->Arg(112);

BENCHMARK_MAIN();
