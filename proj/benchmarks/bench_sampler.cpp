// SPDX-License-Identifier: Apache-2.0
#include "csmoe/rng.hpp"
#include "csmoe/sampler.hpp"

#include <benchmark/benchmark.h>

#include <numeric>

using namespace csmoe;
using namespace csmoe::sampler;

namespace {

std::vector<LonLat> random_points(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<LonLat> pts(n);
    for (auto& p : pts)
        p = {rng.uniform(-10.0, 30.0), rng.uniform(35.0, 60.0)};
    return pts;
}

void BM_Haversine(benchmark::State& state)
{
    const auto pts = random_points(1024, 1);
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(haversine(pts[i & 1023], pts[(i + 511) & 1023]));
        ++i;
    }
}
BENCHMARK(BM_Haversine);

void BM_DistanceTableBuild(benchmark::State& state)
{
    const auto pts = random_points(static_cast<std::size_t>(state.range(0)), 2);
    for (auto _ : state)
        benchmark::DoNotOptimize(DistanceTable(pts));
}
BENCHMARK(BM_DistanceTableBuild)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

// Fitness on a 100-element selection; range(1) toggles the cached table.
void BM_Fitness(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const DistanceTable table(random_points(n, 3), state.range(1) ? n : 0);
    std::vector<std::size_t> sel(100);
    std::iota(sel.begin(), sel.end(), std::size_t{0});
    for (auto& s : sel)
        s = s * (n / 100);
    for (auto _ : state)
        benchmark::DoNotOptimize(entropy_dispersion_fitness(table, sel));
}
BENCHMARK(BM_Fitness)->Args({1000, 1})->Args({1000, 0});

void BM_EvolveStratum(benchmark::State& state)
{
    const auto pts = random_points(1000, 4);
    GaConfig cfg;
    cfg.iterations = static_cast<std::size_t>(state.range(0));
    for (auto _ : state)
        benchmark::DoNotOptimize(evolve_stratum(pts, cfg));
}
BENCHMARK(BM_EvolveStratum)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace
