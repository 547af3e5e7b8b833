// SPDX-License-Identifier: Apache-2.0
#include "csmoe/tokenizer.hpp"

#include "csmoe/errors.hpp"
#include "csmoe/rng.hpp"

#include <algorithm>
#include <numeric>

namespace csmoe {

PatchSet patchify(const Tensor& image, std::size_t patch_size)
{
    if (image.rank() != 3)
        throw DimensionError("patchify: expected a C×H×W image, got " + shape_str(image.shape()));
    if (patch_size == 0)
        throw ParameterError("patchify: patch size must be positive");
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h % patch_size != 0 || w % patch_size != 0)
        throw DimensionError("patchify: image " + shape_str(image.shape()) + " is not divisible into " +
                             std::to_string(patch_size) + "×" + std::to_string(patch_size) + " patches");
    PatchSet out;
    out.patch_size = patch_size;
    out.rows = h / patch_size;
    out.cols = w / patch_size;
    out.channels = c;
    const std::size_t width = patch_size * patch_size * c;
    std::vector<double> tokens(out.count() * width);
    const auto px = image.data();
    for (std::size_t gr = 0; gr < out.rows; ++gr)
        for (std::size_t gc = 0; gc < out.cols; ++gc) {
            double* dst = tokens.data() + (gr * out.cols + gc) * width;
            for (std::size_t i = 0; i < patch_size; ++i)
                for (std::size_t j = 0; j < patch_size; ++j)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        dst[(i * patch_size + j) * c + ch] = px[(ch * h + gr * patch_size + i) * w + gc * patch_size + j];
        }
    out.tokens = Tensor::from({out.count(), width}, std::move(tokens));
    return out;
}

Tensor unpatchify(const PatchSet& patches)
{
    const std::size_t p = patches.patch_size, c = patches.channels;
    const std::size_t h = patches.rows * p, w = patches.cols * p;
    const std::size_t width = p * p * c;
    if (patches.tokens.rank() != 2 || patches.tokens.dim(0) != patches.count() || patches.tokens.dim(1) != width)
        throw DimensionError("unpatchify: tokens " + shape_str(patches.tokens.shape()) + " inconsistent with grid " +
                             std::to_string(patches.rows) + "×" + std::to_string(patches.cols) + " and token width " +
                             std::to_string(width));
    std::vector<double> px(c * h * w);
    const auto tokens = patches.tokens.data();
    for (std::size_t gr = 0; gr < patches.rows; ++gr)
        for (std::size_t gc = 0; gc < patches.cols; ++gc) {
            const double* src = tokens.data() + (gr * patches.cols + gc) * width;
            for (std::size_t i = 0; i < p; ++i)
                for (std::size_t j = 0; j < p; ++j)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        px[(ch * h + gr * p + i) * w + gc * p + j] = src[(i * p + j) * c + ch];
        }
    return Tensor::from({c, h, w}, std::move(px));
}

std::size_t masked_count(std::size_t tokens, double ratio)
{
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(tokens) + 0.5));
}

MaskPair sample_masks(std::size_t tokens, double ratio, std::uint64_t seed)
{
    if (!(ratio > 0.0 && ratio < 1.0))
        throw ParameterError("sample_masks: ratio must lie in (0, 1), got " + std::to_string(ratio));
    const std::size_t k = masked_count(tokens, ratio);
    std::vector<std::size_t> order(tokens);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = 0; i < k; ++i)
        std::swap(order[i], order[i + rng.index(tokens - i)]);

    MaskPair m;
    m.ratio = ratio;
    m.seed = seed;
    m.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    m.unmasked.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    std::sort(m.masked.begin(), m.masked.end());
    std::sort(m.unmasked.begin(), m.unmasked.end());
    return m;
}

MaskPair no_mask(std::size_t tokens)
{
    MaskPair m;
    m.unmasked.resize(tokens);
    std::iota(m.unmasked.begin(), m.unmasked.end(), 0);
    return m;
}

Tensor positional_embedding(std::size_t rows, std::size_t cols, std::size_t dim)
{
    if (dim == 0 || dim % 4 != 0)
        throw ParameterError("positional_embedding: embedding width must be a positive multiple of 4, got " +
                             std::to_string(dim));
    const std::size_t quarter = dim / 4;
    std::vector<double> omega(quarter);
    for (std::size_t k = 0; k < quarter; ++k)
        omega[k] = 1.0 / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(quarter));

    std::vector<double> table(rows * cols * dim);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            double* row = table.data() + (r * cols + c) * dim;
            for (std::size_t k = 0; k < quarter; ++k) {
                row[k] = std::sin(static_cast<double>(r) * omega[k]);
                row[quarter + k] = std::cos(static_cast<double>(r) * omega[k]);
                row[2 * quarter + k] = std::sin(static_cast<double>(c) * omega[k]);
                row[3 * quarter + k] = std::cos(static_cast<double>(c) * omega[k]);
            }
        }
    return Tensor::from({rows * cols, dim}, std::move(table));
}

TileSplit split_tile(const Tensor& tile, std::size_t patch_size, double invalid_sentinel)
{
    if (tile.rank() != 3)
        throw DimensionError("split_tile: expected a C×H×W tile, got " + shape_str(tile.shape()));
    if (patch_size == 0)
        throw ParameterError("split_tile: patch size must be at least 1");
    const std::size_t c = tile.dim(0), h = tile.dim(1), w = tile.dim(2);
    const std::size_t gr = h / patch_size, gc = w / patch_size;
    const std::size_t gr_ceil = (h + patch_size - 1) / patch_size, gc_ceil = (w + patch_size - 1) / patch_size;
    const bool nan_sentinel = std::isnan(invalid_sentinel);
    const auto is_invalid = [&](double v) { return nan_sentinel ? std::isnan(v) : v == invalid_sentinel; };

    TileSplit out;
    out.report.tile_height = h;
    out.report.tile_width = w;
    out.report.patch_size = patch_size;
    out.report.discarded_small = gr_ceil * gc_ceil - gr * gc;

    const auto px = tile.data();
    for (std::size_t r = 0; r < gr; ++r)
        for (std::size_t q = 0; q < gc; ++q) {
            std::vector<double> cell(c * patch_size * patch_size);
            bool invalid = false;
            for (std::size_t ch = 0; ch < c && !invalid; ++ch)
                for (std::size_t i = 0; i < patch_size && !invalid; ++i)
                    for (std::size_t j = 0; j < patch_size; ++j) {
                        const double v = px[(ch * h + r * patch_size + i) * w + q * patch_size + j];
                        if (is_invalid(v)) {
                            invalid = true;
                            break;
                        }
                        cell[(ch * patch_size + i) * patch_size + j] = v;
                    }
            if (invalid) {
                ++out.report.discarded_invalid;
                continue;
            }
            out.patches.push_back(Tensor::from({c, patch_size, patch_size}, std::move(cell)));
            out.cells.emplace_back(r, q);
            ++out.report.kept;
        }
    return out;
}

}  // namespace csmoe
