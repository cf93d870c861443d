// Serial reference vs OpenMP kernels on desk-scale and wider shapes.
//
//   ./dmm_bench --benchmark_filter=Conv

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dmm/kernels.hpp"

namespace k = dmm::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

k::ConvGeometry conv_shape(const benchmark::State& state) {
  k::ConvGeometry g;
  g.batch = 16;
  g.in_channels = static_cast<std::size_t>(state.range(0));
  g.out_channels = 2 * g.in_channels;
  g.in_h = g.in_w = static_cast<std::size_t>(state.range(1));
  g.kernel = 3;
  g.padding = 1;
  return g;
}

template <bool Omp>
void BM_ConvForward(benchmark::State& state) {
  const k::ConvGeometry g = conv_shape(state);
  const auto in = random_values(g.batch * g.in_channels * g.in_h * g.in_w, 1);
  const auto w = random_values(g.out_channels * g.in_channels * 9, 2);
  const auto b = random_values(g.out_channels, 3);
  std::vector<double> out(g.batch * g.out_channels * g.out_h() * g.out_w());
  for (auto _ : state) {
    if constexpr (Omp) k::omp::conv2d_forward(g, in, w, b, out);
    else k::serial::conv2d_forward(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * g.batch));
}

template <bool Omp>
void BM_ConvBackward(benchmark::State& state) {
  const k::ConvGeometry g = conv_shape(state);
  const auto in = random_values(g.batch * g.in_channels * g.in_h * g.in_w, 1);
  const auto w = random_values(g.out_channels * g.in_channels * 9, 2);
  const auto up = random_values(g.batch * g.out_channels * g.out_h() * g.out_w(), 4);
  std::vector<double> in_grad(in.size()), wg(w.size()), bg(g.out_channels);
  for (auto _ : state) {
    if constexpr (Omp) k::omp::conv2d_backward(g, in, w, up, in_grad, wg, bg);
    else k::serial::conv2d_backward(g, in, w, up, in_grad, wg, bg);
    benchmark::DoNotOptimize(in_grad.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * g.batch));
}

template <bool Omp>
void BM_MaxPool(benchmark::State& state) {
  k::PoolGeometry g;
  g.batch = 16;
  g.channels = static_cast<std::size_t>(state.range(0));
  g.in_h = g.in_w = static_cast<std::size_t>(state.range(1));
  const auto in = random_values(g.batch * g.channels * g.in_h * g.in_w, 5);
  const auto up = random_values(g.batch * g.channels * g.out_h() * g.out_w(), 6);
  std::vector<double> out(up.size()), in_grad(in.size());
  for (auto _ : state) {
    if constexpr (Omp) {
      k::omp::maxpool_forward(g, in, out);
      k::omp::maxpool_backward(g, in, up, in_grad);
    } else {
      k::serial::maxpool_forward(g, in, out);
      k::serial::maxpool_backward(g, in, up, in_grad);
    }
    benchmark::DoNotOptimize(in_grad.data());
  }
}

template <bool Omp>
void BM_Dense(benchmark::State& state) {
  k::DenseGeometry g{16, static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1))};
  const auto in = random_values(g.batch * g.in_dim, 7);
  const auto w = random_values(g.in_dim * g.out_dim, 8);
  const auto b = random_values(g.out_dim, 9);
  const auto up = random_values(g.batch * g.out_dim, 10);
  std::vector<double> out(g.batch * g.out_dim), in_grad(in.size()), wg(w.size()), bg(b.size());
  for (auto _ : state) {
    if constexpr (Omp) {
      k::omp::dense_forward(g, in, w, b, out);
      k::omp::dense_backward(g, in, w, up, in_grad, wg, bg);
    } else {
      k::serial::dense_forward(g, in, w, b, out);
      k::serial::dense_backward(g, in, w, up, in_grad, wg, bg);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

void conv_args(benchmark::internal::Benchmark* b) { b->Args({8, 16})->Args({16, 8})->Args({32, 32}); }
void pool_args(benchmark::internal::Benchmark* b) { b->Args({8, 16})->Args({64, 32}); }
void dense_args(benchmark::internal::Benchmark* b) { b->Args({112, 64})->Args({448, 128})->Args({2048, 1024}); }

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("ConvForward/serial")->Apply(conv_args);
BENCHMARK(BM_ConvForward<true>)->Name("ConvForward/omp")->Apply(conv_args)->UseRealTime();
BENCHMARK(BM_ConvBackward<false>)->Name("ConvBackward/serial")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<true>)->Name("ConvBackward/omp")->Apply(conv_args)->UseRealTime();
BENCHMARK(BM_MaxPool<false>)->Name("MaxPool/serial")->Apply(pool_args);
BENCHMARK(BM_MaxPool<true>)->Name("MaxPool/omp")->Apply(pool_args)->UseRealTime();
BENCHMARK(BM_Dense<false>)->Name("Dense/serial")->Apply(dense_args);
BENCHMARK(BM_Dense<true>)->Name("Dense/omp")->Apply(dense_args)->UseRealTime();

BENCHMARK_MAIN();
