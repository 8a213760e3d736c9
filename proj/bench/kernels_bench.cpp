// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels vs their OpenMP counterparts. Run with
// MODREF_THREADS or OMP_NUM_THREADS to vary the team size.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "modref/kernels.hpp"

namespace k = modref::kernels;

namespace {

std::vector<float> noise(std::size_t n, unsigned seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<float> dist;
    std::vector<float> v(n);
    for (auto& x : v) x = dist(gen);
    return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = noise(n * n, 1), b = noise(n * n, 2);
    std::vector<float> c(n * n);
    const k::GemmShape shape{n, n, n, k::Transpose::No, k::Transpose::Yes, false};
    for (auto _ : state) {
        if constexpr (Parallel) k::gemm<float>(shape, a, b, c);
        else k::serial::gemm<float>(shape, a, b, c);
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["GFLOP/s"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                   benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{256};
    const auto in = noise(rows * cols, 3);
    std::vector<float> out(rows * cols);
    const k::SoftmaxMask<float> mask{true, {}};
    for (auto _ : state) {
        if constexpr (Parallel) k::softmax_rows<float>(rows, cols, 0.125f, mask, in, out);
        else k::serial::softmax_rows<float>(rows, cols, 0.125f, mask, in, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * rows));
}

template <bool Parallel>
void BM_LayerNorm(benchmark::State& state) {
    const auto rows = static_cast<std::size_t>(state.range(0)), cols = std::size_t{512};
    const auto in = noise(rows * cols, 4), gain = noise(cols, 5), bias = noise(cols, 6);
    std::vector<float> xhat(rows * cols), inv(rows), out(rows * cols);
    for (auto _ : state) {
        if constexpr (Parallel) k::layer_norm_rows<float>(rows, cols, 1e-5f, in, gain, bias, xhat, inv, out);
        else k::serial::layer_norm_rows<float>(rows, cols, 1e-5f, in, gain, bias, xhat, inv, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations() * rows));
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256)->Arg(512)->UseRealTime();
BENCHMARK(BM_Softmax<false>)->Name("softmax/serial")->Arg(256)->Arg(4096);
BENCHMARK(BM_Softmax<true>)->Name("softmax/parallel")->Arg(256)->Arg(4096)->UseRealTime();
BENCHMARK(BM_LayerNorm<false>)->Name("layer_norm/serial")->Arg(256)->Arg(4096);
BENCHMARK(BM_LayerNorm<true>)->Name("layer_norm/parallel")->Arg(256)->Arg(4096)->UseRealTime();

BENCHMARK_MAIN();
