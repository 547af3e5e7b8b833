// SPDX-License-Identifier: Apache-2.0
#include "csmoe/rng.hpp"
#include "csmoe/tensor.hpp"
#include "csmoe/tokenizer.hpp"

#include <benchmark/benchmark.h>

using namespace csmoe;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, bool grad = false)
{
    Rng rng(seed);
    std::vector<double> v(rows * cols);
    for (auto& x : v)
        x = rng.uniform(-1.0, 1.0);
    return grad ? Tensor::parameter({rows, cols}, v) : Tensor::from({rows, cols}, v);
}

void BM_Matmul(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
    for (auto _ : state)
        benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256);

void BM_MatmulBackward(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    Tensor a = random_matrix(n, n, 1, true), b = random_matrix(n, n, 2, true);
    for (auto _ : state) {
        a.zero_grad();
        b.zero_grad();
        sum(matmul(a, b)).backward();
    }
}
BENCHMARK(BM_MatmulBackward)->RangeMultiplier(2)->Range(16, 128);

void BM_Softmax(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = random_matrix(n, n, 3);
    for (auto _ : state)
        benchmark::DoNotOptimize(softmax(a, 1));
}
BENCHMARK(BM_Softmax)->Arg(49)->Arg(196);

void BM_PatchifyRoundTrip(benchmark::State& state)
{
    Rng rng(4);
    std::vector<double> v(12 * 120 * 120);
    for (auto& x : v)
        x = rng.uniform();
    const Tensor img = Tensor::from({12, 120, 120}, v);
    for (auto _ : state)
        benchmark::DoNotOptimize(unpatchify(patchify(img, static_cast<std::size_t>(state.range(0)))));
}
BENCHMARK(BM_PatchifyRoundTrip)->Arg(8)->Arg(24);

}  // namespace
