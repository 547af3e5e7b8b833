// SPDX-License-Identifier: Apache-2.0
//
// Soft mixture-of-experts routing and the transformer blocks built around it.
//
// Routing for tokens z [P×d] and S slots:
//   logits[ϑ,n]  = ⟨slot_embeddings[ϑ], z_n⟩
//   dispatch     = softmax over tokens n of logits/τ      (rows sum to 1)
//   combine      = softmax over slots ϑ of logits         (columns sum to 1)
//   slots        = dispatch · z                           [S×d]
//   y_n          = Σ_ϑ combine[ϑ,n] · Expert_{e(ϑ)}(slot_ϑ)
// Exactly S expert evaluations happen per call, independent of P.
#pragma once

#include "csmoe/params.hpp"
#include "csmoe/tensor.hpp"

#include <string>
#include <vector>

namespace csmoe {

enum class Activation
{
    gelu,
    identity,  // test mode: experts become affine maps
};

struct Linear
{
    Tensor weight;  // [in × out]
    Tensor bias;    // [out]
};

Tensor apply(const Linear& layer, const Tensor& x);

struct LayerNormParams
{
    Tensor gain;
    Tensor bias;
};

Tensor apply(const LayerNormParams& norm, const Tensor& x);

/// Multi-head self-attention. Query/key/value projections carry no bias.
struct AttentionParams
{
    Tensor wq, wk, wv;  // [d × d]
    Linear out;
    std::size_t heads = 1;
};

Tensor attention_forward(const Tensor& z, const AttentionParams& params);

struct ExpertParams
{
    Linear fc1;  // d → h
    Linear fc2;  // h → d
};

Tensor expert_forward(const ExpertParams& expert, const Tensor& x, Activation activation);

struct SoftMoELayerParams
{
    Tensor slot_embeddings;  // [S × d]
    std::vector<ExpertParams> experts;
    double temperature = 1.0;
    std::vector<std::size_t> slot_to_expert;
    Activation activation = Activation::gelu;

    std::size_t slot_count() const { return slot_embeddings.dim(0); }
};

/// Throws ParameterError when S < 1, R < 1, τ ≤ 0 or a slot maps to a missing expert.
void validate(const SoftMoELayerParams& params);

struct RoutingTensors
{
    Tensor logits;    // [S×P]
    Tensor dispatch;  // α  [S×P]
    Tensor combine;   // α̂  [S×P]
    Tensor slots;     // [S×d]
};

RoutingTensors route(const Tensor& z, const SoftMoELayerParams& params);

struct MoeOutput
{
    Tensor output;
    RoutingTensors routing;
};

MoeOutput moe_forward(const Tensor& z, const SoftMoELayerParams& params);

struct MoeBlockParams
{
    LayerNormParams norm1;
    AttentionParams attention;
    LayerNormParams norm2;
    SoftMoELayerParams moe;
};

/// Pre-norm residual block: z' = z + Attn(LN(z)); out = z' + MoE(LN(z')).
MoeOutput block_forward(const Tensor& z, const MoeBlockParams& params);

/// Plain transformer block (attention + GELU MLP) used by the decoders.
struct MlpBlockParams
{
    LayerNormParams norm1;
    AttentionParams attention;
    LayerNormParams norm2;
    Linear fc1;
    Linear fc2;
};

Tensor mlp_block_forward(const Tensor& z, const MlpBlockParams& params);

// Builders. Parameter names are `prefix` + a fixed suffix.

Linear build_linear(ParamFactory& f, const std::string& prefix, std::size_t in, std::size_t out);
LayerNormParams build_layer_norm(ParamFactory& f, const std::string& prefix, std::size_t dim);
AttentionParams build_attention(ParamFactory& f, const std::string& prefix, std::size_t dim, std::size_t heads);

struct SoftMoEShape
{
    std::size_t dim = 0;
    std::size_t hidden = 0;
    std::size_t slots = 1;
    std::size_t experts = 1;
    double temperature = 1.0;
    Activation activation = Activation::gelu;
};

/// Slot ϑ is served by expert ϑ mod R (identity map when S == R).
SoftMoELayerParams build_moe_layer(ParamFactory& f, const std::string& prefix, const SoftMoEShape& shape);
MoeBlockParams build_moe_block(ParamFactory& f, const std::string& prefix, const SoftMoEShape& shape, std::size_t heads);
MlpBlockParams build_mlp_block(ParamFactory& f, const std::string& prefix, std::size_t dim, std::size_t hidden,
                               std::size_t heads);

}  // namespace csmoe
