// Copyright (c) 2026 The fastfwd Authors
// SPDX-License-Identifier: Apache-2.0

// Serial reference vs OpenMP kernels. Both produce bit-identical results;
// only the wall time differs. Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fastfwd/kernels.hpp"

namespace {

using namespace fastfwd;
using namespace fastfwd::kernels;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

template <auto Kernel>
void BM_Gemm(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  const GemmDims dims{s, s, s};
  const auto a = random_values(s * s, 1), b = random_values(s * s, 2);
  std::vector<double> c(s * s);
  for (auto _ : state) {
    Kernel(a, Op::none, b, Op::none, c, dims);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["FLOP/s"] =
      benchmark::Counter(static_cast<double>(flops::gemm(s, s, s)), benchmark::Counter::kIsIterationInvariantRate);
}

template <auto Kernel>
void BM_AttentionForward(benchmark::State& state) {
  const AttentionDims dims{8, static_cast<std::size_t>(state.range(0)), 4, 16};
  const auto q = random_values(dims.activation_size(), 3), k = random_values(dims.activation_size(), 4),
             v = random_values(dims.activation_size(), 5);
  std::vector<double> out(dims.activation_size()), probs(dims.probs_size());
  for (auto _ : state) {
    Kernel(q, k, v, out, probs, dims);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Kernel>
void BM_AttentionBackward(benchmark::State& state) {
  const AttentionDims dims{8, static_cast<std::size_t>(state.range(0)), 4, 16};
  const std::size_t n = dims.activation_size();
  const auto q = random_values(n, 3), k = random_values(n, 4), v = random_values(n, 5), g = random_values(n, 6);
  std::vector<double> out(n), probs(dims.probs_size()), dq(n), dk(n), dv(n);
  attention_forward_reference(q, k, v, out, probs, dims);
  for (auto _ : state) {
    Kernel(g, q, k, v, probs, dq, dk, dv, dims);
    benchmark::DoNotOptimize(dq.data());
  }
}

BENCHMARK(BM_Gemm<gemm_reference>)->Name("gemm/reference")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_Gemm<gemm_parallel>)->Name("gemm/parallel")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_AttentionForward<attention_forward_reference>)->Name("attention_fwd/reference")->Arg(32)->Arg(128);
BENCHMARK(BM_AttentionForward<attention_forward_parallel>)->Name("attention_fwd/parallel")->Arg(32)->Arg(128);
BENCHMARK(BM_AttentionBackward<attention_backward_reference>)->Name("attention_bwd/reference")->Arg(32)->Arg(128);
BENCHMARK(BM_AttentionBackward<attention_backward_parallel>)->Name("attention_bwd/parallel")->Arg(32)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
