// SPDX-License-Identifier: Apache-2.0
#include "csmoe/errors.hpp"
#include "csmoe/rng.hpp"
#include "csmoe/tokenizer.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace csmoe;
using csmoe::testing::random_tensor;

TEST(Patchify, CountsTokens)
{
    const PatchSet small = patchify(Tensor::zeros({1, 4, 4}), 2);
    EXPECT_EQ(small.tokens.shape(), (Shape{4, 4}));
    const PatchSet s2 = patchify(Tensor::zeros({12, 224, 224}), 32);
    EXPECT_EQ(s2.count(), 49u);
    EXPECT_EQ(s2.tokens.shape(), (Shape{49, 32 * 32 * 12}));
}

TEST(Patchify, RasterLayoutWithAdjacentChannels)
{
    // value encodes (c, y, x) so the token layout can be read back directly
    std::vector<double> v(2 * 4 * 4);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x)
                v[(c * 4 + y) * 4 + x] = 100.0 * c + 10.0 * y + x;
    const PatchSet p = patchify(Tensor::from({2, 4, 4}, v), 2);
    // token 1 is the top-right 2×2 block; its first pixel is (y=0, x=2)
    EXPECT_EQ(p.tokens(1, 0), 2.0);
    EXPECT_EQ(p.tokens(1, 1), 102.0);
    EXPECT_EQ(p.tokens(1, 2), 3.0);
    // token 2 is bottom-left; its last pixel is (y=3, x=1), channel 1
    EXPECT_EQ(p.tokens(2, 7), 131.0);
}

TEST(Patchify, RoundTripOnRandomShapes)
{
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t rho = 1 + rng.index(5);
        const std::size_t c = 1 + rng.index(4);
        const std::size_t h = rho * (1 + rng.index(5)), w = rho * (1 + rng.index(5));
        const Tensor img = random_tensor({c, h, w}, 1000 + trial);
        const Tensor back = unpatchify(patchify(img, rho));
        ASSERT_EQ(back.shape(), img.shape());
        ASSERT_EQ(back.to_vector(), img.to_vector());
    }
}

TEST(Patchify, RejectsIndivisibleSides)
{
    EXPECT_THROW(patchify(Tensor::zeros({1, 5, 4}), 2), DimensionError);
    EXPECT_THROW(patchify(Tensor::zeros({4, 4}), 2), DimensionError);
}

TEST(Masks, RoundHalfUp)
{
    EXPECT_EQ(masked_count(49, 0.5), 25u);
    EXPECT_EQ(sample_masks(49, 0.5, 0).masked.size(), 25u);
    EXPECT_EQ(masked_count(10, 0.25), 3u);
    EXPECT_EQ(masked_count(10, 0.24), 2u);
}

TEST(Masks, DeterministicUnderSeed)
{
    EXPECT_EQ(sample_masks(10, 0.5, 7).masked, sample_masks(10, 0.5, 7).masked);
}

TEST(Masks, EveryTwoSubsetOfFourReachable)
{
    std::set<std::vector<std::size_t>> seen;
    for (std::uint64_t seed = 0; seed < 1000; ++seed)
        seen.insert(sample_masks(4, 0.5, seed).masked);
    EXPECT_EQ(seen.size(), 6u);
}

TEST(Masks, PartitionProperty)
{
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t p = 1 + rng.index(300);
        const double ratio = rng.uniform(0.001, 0.999);
        const std::uint64_t seed = rng.next_u64();
        const MaskPair m = sample_masks(p, ratio, seed);
        ASSERT_TRUE(std::is_sorted(m.masked.begin(), m.masked.end()));
        ASSERT_TRUE(std::is_sorted(m.unmasked.begin(), m.unmasked.end()));
        std::vector<std::size_t> all;
        std::merge(m.masked.begin(), m.masked.end(), m.unmasked.begin(), m.unmasked.end(), std::back_inserter(all));
        ASSERT_EQ(all.size(), p);
        for (std::size_t i = 0; i < p; ++i)
            ASSERT_EQ(all[i], i);
        ASSERT_EQ(m.masked.size(), static_cast<std::size_t>(std::floor(ratio * static_cast<double>(p) + 0.5)));
    }
}

TEST(Masks, RatioOutsideOpenIntervalRejected)
{
    EXPECT_THROW(sample_masks(10, 0.0, 0), ParameterError);
    EXPECT_THROW(sample_masks(10, 1.0, 0), ParameterError);
    EXPECT_THROW(sample_masks(10, -0.1, 0), ParameterError);
}

TEST(PositionalEmbedding, SinglePositionDependsOnlyOnWidth)
{
    const Tensor t = positional_embedding(1, 1, 8);
    ASSERT_EQ(t.shape(), (Shape{1, 8}));
    // position 0: sin parts are 0 and cos parts are 1
    EXPECT_EQ(t.to_vector(), (std::vector<double>{0, 0, 1, 1, 0, 0, 1, 1}));
}

TEST(PositionalEmbedding, ClosedFormEntry)
{
    const Tensor t = positional_embedding(7, 7, 32);
    // grid (2, 5): row half uses pos 2, column half pos 5; ω_k = 10000^(−k/8)
    const std::size_t n = 2 * 7 + 5;
    for (std::size_t k = 0; k < 8; ++k) {
        const double w = std::pow(10000.0, -static_cast<double>(k) / 8.0);
        EXPECT_NEAR(t(n, k), std::sin(2.0 * w), 1e-15);
        EXPECT_NEAR(t(n, 8 + k), std::cos(2.0 * w), 1e-15);
        EXPECT_NEAR(t(n, 16 + k), std::sin(5.0 * w), 1e-15);
        EXPECT_NEAR(t(n, 24 + k), std::cos(5.0 * w), 1e-15);
    }
}

TEST(PositionalEmbedding, DistinctRowsAndDeterminism)
{
    const Tensor t = positional_embedding(7, 7, 32);
    for (std::size_t a = 0; a < 49; ++a)
        for (std::size_t b = a + 1; b < 49; ++b) {
            double diff = 0.0;
            for (std::size_t k = 0; k < 32; ++k)
                diff = std::max(diff, std::abs(t(a, k) - t(b, k)));
            EXPECT_GT(diff, 1e-6) << a << " vs " << b;
        }
    EXPECT_EQ(t.to_vector(), positional_embedding(7, 7, 32).to_vector());
    EXPECT_THROW(positional_embedding(2, 2, 6), ParameterError);
}

TEST(SplitTile, LargeTileKeepsInteriorGrid)
{
    const TileSplit s = split_tile(Tensor::zeros({1, 1068, 1068}), 120);
    EXPECT_EQ(s.report.kept, 64u);
    EXPECT_EQ(s.patches.size(), 64u);
    EXPECT_EQ(s.report.discarded_invalid, 0u);
    EXPECT_EQ(s.report.discarded_small, 9u * 9u - 64u);
    EXPECT_EQ(s.patches.front().shape(), (Shape{1, 120, 120}));
}

TEST(SplitTile, PoisonedCell)
{
    Tensor tile = Tensor::zeros({2, 240, 240});
    tile.mutable_data()[240 * 240] = std::nan("");  // band 1, pixel (0,0)
    const TileSplit s = split_tile(tile, 120);
    EXPECT_EQ(s.report.kept, 3u);
    EXPECT_EQ(s.report.discarded_invalid, 1u);
    EXPECT_EQ(s.report.kept + s.report.discarded_invalid, 4u);
    EXPECT_EQ(s.cells.front(), (std::pair<std::size_t, std::size_t>{0, 1}));

    Tensor marked = Tensor::zeros({1, 240, 240});
    marked.mutable_data()[239 * 240 + 239] = -9999.0;
    EXPECT_EQ(split_tile(marked, 120, -9999.0).report.discarded_invalid, 1u);
}

TEST(SplitTile, TileSmallerThanPatch)
{
    const TileSplit s = split_tile(Tensor::zeros({1, 100, 100}), 120);
    EXPECT_EQ(s.report.kept, 0u);
    EXPECT_EQ(s.report.discarded_invalid, 0u);
    EXPECT_TRUE(s.patches.empty());
}

TEST(SplitTile, PatchContentsMatchSource)
{
    const Tensor tile = random_tensor({2, 6, 9}, 5);
    const TileSplit s = split_tile(tile, 3);
    ASSERT_EQ(s.report.kept, 6u);
    const auto [r, c] = s.cells[4];
    const Tensor& p = s.patches[4];
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t x = 0; x < 3; ++x)
                EXPECT_EQ(p.data()[(b * 3 + y) * 3 + x], tile.data()[(b * 6 + r * 3 + y) * 9 + c * 3 + x]);
}
