// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels against their OpenMP versions, plus the batched
// evaluator in both execution modes.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "modmerge/kernels.hpp"
#include "modmerge/toy_net.hpp"

using namespace modmerge;

namespace {

std::vector<double> noise(std::size_t n, unsigned seed)
{
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(gen);
    return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = noise(n * n, 1), b = noise(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::parallel::matmul(a, b, c, n, n, n);
        else
            kernels::serial::matmul(a, b, c, n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <bool Parallel>
void BM_Conv(benchmark::State& state)
{
    kernels::ConvGeometry g;
    g.in_channels = 3;
    g.in_h = g.in_w = static_cast<std::size_t>(state.range(0));
    g.out_channels = 16;
    g.kernel_h = g.kernel_w = 3;
    const auto in = noise(g.input_size(), 3), w = noise(g.weight_size(), 4), b = noise(g.out_channels, 5);
    std::vector<double> out(g.output_size());
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::parallel::conv2d(in, w, b, out, g);
        else
            kernels::serial::conv2d(in, w, b, out, g);
        benchmark::DoNotOptimize(out.data());
    }
}

template <Execution E>
void BM_BatchLoss(benchmark::State& state)
{
    const ToyNetSpec spec;
    const ToyNetwork net(spec, ToyNetwork::random_base(spec, 6));
    const ModuleAdapters m = net.fresh_module(7);
    const auto n = static_cast<std::size_t>(state.range(0));
    Batch batch;
    batch.inputs = Tensor({n, spec.in_channels, spec.input_size, spec.input_size});
    const auto x = noise(batch.inputs.size(), 8);
    for (std::size_t i = 0; i < x.size(); ++i) batch.inputs[i] = x[i];
    batch.targets = Tensor({n, spec.outputs});
    batch.weights = Tensor::filled({n, spec.outputs}, 1.0);
    const BatchEvaluator eval(net, E);
    for (auto _ : state) benchmark::DoNotOptimize(eval.adapter_step(batch, m).loss);
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_Matmul<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_Conv<false>)->Arg(32)->Arg(128);
BENCHMARK(BM_Conv<true>)->Arg(32)->Arg(128);
BENCHMARK(BM_BatchLoss<Execution::Serial>)->Arg(64);
BENCHMARK(BM_BatchLoss<Execution::Parallel>)->Arg(64);

BENCHMARK_MAIN();
