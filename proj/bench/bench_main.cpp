// Microbenchmarks for the hot row-parallel kernels against their serial
// reference implementations. Run with --benchmark_filter=... to narrow.

#include <benchmark/benchmark.h>

#include <random>

#include "svgpcr/kernel.hpp"
#include "svgpcr/likelihood.hpp"

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                              double lo = -2.0, double hi = 2.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(lo, hi);
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = unif(rng);
  }
  return out;
}

void bm_kernel_matrix(benchmark::State& state, bool parallel) {
  const Eigen::Index n = state.range(0);
  const svgpcr::SEKernelParams params = svgpcr::SEKernelParams::from_values(1.0, 1.2);
  const Eigen::MatrixXd a = random_matrix(n, 4, 1);
  const Eigen::MatrixXd b = random_matrix(100, 4, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(parallel ? svgpcr::kernel_matrix(params, a, b)
                                      : svgpcr::kernel_matrix_serial(params, a, b));
  }
  state.SetItemsProcessed(state.iterations() * n * 100);
}

void bm_variational_expectation(benchmark::State& state, bool parallel) {
  const Eigen::Index n = state.range(0);
  const int k = 5;
  const svgpcr::RobustMax lik(k);
  const Eigen::MatrixXd mean = random_matrix(n, k, 3);
  const Eigen::MatrixXd var = random_matrix(n, k, 4, 0.2, 2.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(parallel ? svgpcr::variational_expectation(lik, mean, var)
                                      : svgpcr::variational_expectation_serial(lik, mean, var));
  }
  state.SetItemsProcessed(state.iterations() * n * k);
}

void bm_predict_class_probs(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const int k = 5;
  const svgpcr::RobustMax lik(k);
  const Eigen::MatrixXd mean = random_matrix(n, k, 5);
  const Eigen::MatrixXd var = random_matrix(n, k, 6, 0.2, 2.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(svgpcr::predict_class_probs(lik, mean, var));
  }
  state.SetItemsProcessed(state.iterations() * n * k);
}

}  // namespace

BENCHMARK_CAPTURE(bm_kernel_matrix, parallel, true)->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK_CAPTURE(bm_kernel_matrix, serial, false)->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK_CAPTURE(bm_variational_expectation, parallel, true)->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK_CAPTURE(bm_variational_expectation, serial, false)->Arg(256)->Arg(1024)->Arg(4096);
BENCHMARK(bm_predict_class_probs)->Arg(1024);

BENCHMARK_MAIN();
