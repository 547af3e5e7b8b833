// SPDX-License-Identifier: Apache-2.0
//
// Image → patch tokens, random masking, fixed 2-D sin-cos positions and tile splitting.
// All indices here are 0-based.
#pragma once

#include "csmoe/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

namespace csmoe {

/// Non-overlapping ρ×ρ patches of a C×H×W image in raster order. Token n holds
/// its pixels row by row with the channels of each pixel adjacent.
struct PatchSet
{
    Tensor tokens;  // [P × ρ²·C]
    std::size_t patch_size = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t channels = 0;

    std::size_t count() const noexcept { return rows * cols; }
};

PatchSet patchify(const Tensor& image, std::size_t patch_size);
Tensor unpatchify(const PatchSet& patches);

struct MaskPair
{
    std::vector<std::size_t> masked;    // sorted
    std::vector<std::size_t> unmasked;  // sorted
    double ratio = 0.0;
    std::uint64_t seed = 0;
};

/// round-half-up(ratio · P)
std::size_t masked_count(std::size_t tokens, double ratio);

/// Uniform random subset of size masked_count(P, ratio), drawn without replacement.
MaskPair sample_masks(std::size_t tokens, double ratio, std::uint64_t seed);

/// Every position visible; used for inference and tests.
MaskPair no_mask(std::size_t tokens);

/// Fixed 2-D sin-cos table [rows·cols × d]: the first d/2 columns encode the grid
/// row, the last d/2 the grid column, each as [sin(pos·ω_k) | cos(pos·ω_k)] with
/// ω_k = 10000^(−k/(d/4)).
Tensor positional_embedding(std::size_t rows, std::size_t cols, std::size_t dim);

struct TileSplitReport
{
    std::size_t tile_height = 0;
    std::size_t tile_width = 0;
    std::size_t patch_size = 0;
    std::size_t kept = 0;
    /// Partial cells along the bottom/right remainder strips.
    std::size_t discarded_small = 0;
    std::size_t discarded_invalid = 0;
};

struct TileSplit
{
    std::vector<Tensor> patches;                               // C×patch×patch each
    std::vector<std::pair<std::size_t, std::size_t>> cells;    // grid (row, col) of each kept patch
    TileSplitReport report;
};

/// Cuts a C×H×W tile into full patch×patch cells. A cell is invalid if any band of any
/// pixel equals `invalid_sentinel` (NaN matches NaN).
TileSplit split_tile(const Tensor& tile, std::size_t patch_size,
                     double invalid_sentinel = std::numeric_limits<double>::quiet_NaN());

}  // namespace csmoe
