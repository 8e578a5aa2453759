// Serial reference kernels against the OpenMP versions.
//
//   ./bench_kernels --benchmark_filter=matmul
//   OMP_NUM_THREADS=4 ./bench_kernels

#include <benchmark/benchmark.h>
#include <omp.h>

#include "mbaf/fusion.hpp"
#include "mbaf/numcore.hpp"
#include "mbaf/serial_kernels.hpp"

namespace {

using namespace mbaf;

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  return rng_normal_matrix(rng, rows, cols, 0.0, 1.0);
}

std::vector<DenseVector> random_batch(std::size_t batch, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DenseVector> out;
  for (std::size_t n = 0; n < batch; ++n) out.push_back(rng_normal(rng, width, 0.0, 1.0));
  return out;
}

template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const DenseMatrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(Parallel ? matmul(a, b) : serial::matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_matvec_t(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const DenseMatrix w = random_matrix(2 * n, n, 3);
  const DenseVector x = random_batch(1, 2 * n, 4).front();
  for (auto _ : state) {
    benchmark::DoNotOptimize(Parallel ? matvec_t(w, x) : serial::matvec_t(w, x));
  }
}

template <bool Parallel>
void BM_outer_batch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto us = random_batch(32, n, 5), vs = random_batch(32, n, 6);
  DenseMatrix g(n, n);
  for (auto _ : state) {
    if (Parallel) {
      outer_accumulate_batch(g, us, vs);
    } else {
      serial::outer_accumulate_batch(g, us, vs);
    }
    benchmark::DoNotOptimize(g.data());
  }
}

// Full layer forward, one thread versus the OpenMP default.
void BM_mbaf_forward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const int threads = state.range(1) == 0 ? omp_get_max_threads() : 1;
  Rng rng(7);
  const FusionLayer layer = make_fusion_layer(FusionVariant::naive_attention(), d / 2, d / 2, rng);
  const MemoryState mem = make_memory(layer, 30, rng);
  const auto m1 = random_batch(32, d / 2, 8), m2 = random_batch(32, d / 2, 9);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(threads);
  for (auto _ : state) benchmark::DoNotOptimize(mbaf_forward(layer, mem, m1, m2));
  omp_set_num_threads(saved);
  state.counters["threads"] = threads;
}

BENCHMARK(BM_matmul<false>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_matmul<true>)->Name("matmul/omp")->Arg(64)->Arg(256);
BENCHMARK(BM_matvec_t<false>)->Name("matvec_t/serial")->Arg(512)->Arg(2048);
BENCHMARK(BM_matvec_t<true>)->Name("matvec_t/omp")->Arg(512)->Arg(2048);
BENCHMARK(BM_outer_batch<false>)->Name("outer_batch/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_outer_batch<true>)->Name("outer_batch/omp")->Arg(256)->Arg(1024);
BENCHMARK(BM_mbaf_forward)->Name("mbaf_forward")->Args({256, 1})->Args({256, 0})->Args({1024, 1})->Args({1024, 0});

}  // namespace

BENCHMARK_MAIN();
