// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace csmoe {

/// SplitMix64 finalizer; used to derive independent seeds from a root seed.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Combines a root seed with stream identifiers into a new seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> streams) noexcept
{
    std::uint64_t s = mix64(seed);
    for (std::uint64_t v : streams)
        s = mix64(s ^ mix64(v + 0x632be59bd9b4e019ULL));
    return s;
}

/// Seeded random source. The engine is std::mt19937_64, whose output sequence the
/// standard fixes; the distributions below are written out so that draws are
/// identical across standard library implementations.
class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), unbiased (rejection sampling).
    std::uint64_t index(std::uint64_t n)
    {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t r;
        do
            r = engine_();
        while (r >= limit);
        return r % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (one value per call, no caching).
    double normal()
    {
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
    }

    /// Normal(0, stddev) truncated to [-2 stddev, 2 stddev] by rejection.
    double truncated_normal(double stddev)
    {
        double z;
        do
            z = normal();
        while (z < -2.0 || z > 2.0);
        return z * stddev;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace csmoe
