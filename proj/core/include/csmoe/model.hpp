// SPDX-License-Identifier: Apache-2.0
//
// Two-modality cross-sensor masked autoencoder with Soft MoE encoders.
//
//   image_j ─patchify─▶ visible tokens ─embed+pos, prepend CLS─▶ modality encoder (MoE blocks)
//           ─▶ shared cross-sensor encoder (MoE blocks, one parameter set for both modalities)
//           ─▶ Z_j
//   Z_j' ─▶ decoder of modality j (plain blocks, mask tokens at hidden positions) ─▶ Linear_{j←j'}
//
// Four reconstructions are produced per pair: x←x, y←y, x←y and y←x. A cross
// reconstruction j←j' is computed from Z_j', so it depends on the mask of j' only.
#pragma once

#include "csmoe/gradcheck.hpp"
#include "csmoe/params.hpp"
#include "csmoe/softmoe.hpp"
#include "csmoe/tensor.hpp"
#include "csmoe/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace csmoe {

enum class Modality : std::size_t
{
    x = 0,  // SAR (Sentinel-1 VV/VH by default)
    y = 1,  // multispectral (Sentinel-2, 10 bands by default)
};

constexpr Modality other(Modality m) noexcept { return m == Modality::x ? Modality::y : Modality::x; }
const char* modality_name(Modality m) noexcept;

struct CsmoeConfig
{
    std::size_t patch_size = 32;
    std::size_t image_side = 224;
    std::size_t channels_x = 2;
    std::size_t channels_y = 10;
    std::size_t d_enc = 768;
    std::size_t d_dec = 256;
    std::size_t enc_ms_layers = 4;
    std::size_t enc_cs_layers = 2;
    std::size_t dec_layers = 4;
    std::size_t slots = 8;
    std::size_t experts = 8;
    std::size_t heads = 12;
    std::size_t dec_heads = 8;
    std::size_t expert_hidden = 768;
    std::size_t dec_mlp_hidden = 1024;
    double temperature = 1.0;
    double mask_ratio = 0.5;
    std::size_t d_proj = 128;
    std::uint64_t seed = 0;
    bool norm_pix = false;

    std::size_t grid() const noexcept { return image_side / patch_size; }
    std::size_t tokens() const noexcept { return grid() * grid(); }
    std::size_t channels(Modality m) const noexcept { return m == Modality::x ? channels_x : channels_y; }
    std::size_t token_width(Modality m) const noexcept { return patch_size * patch_size * channels(m); }

    /// Throws ConfigError naming the violated constraint.
    void validate() const;
};

nlohmann::json config_to_json(const CsmoeConfig& cfg);
/// Fields absent from `j` keep their defaults; unknown keys raise ConfigError.
CsmoeConfig config_from_json(const nlohmann::json& j);

struct EncoderPath
{
    Linear patch_embed;  // [ρ²·C_j × d_enc]
    Tensor cls;          // [d_enc]
    Tensor positions;    // fixed [P × d_enc]
    std::vector<MoeBlockParams> blocks;
};

struct DecoderPath
{
    Linear from_encoder;  // d_enc → d_dec
    Tensor mask_token;    // [d_dec]
    Tensor positions;     // fixed [P × d_dec]
    std::vector<MlpBlockParams> blocks;
    std::array<Linear, 2> heads;  // heads[source modality]: d_dec → ρ²·C_j
};

struct CsmoeModel
{
    CsmoeConfig config;
    std::array<EncoderPath, 2> encoders;
    std::vector<MoeBlockParams> cross_sensor;
    std::array<DecoderPath, 2> decoders;
    Linear projection;  // d_enc → d_proj, applied to CLS for the MI objective

    /// Trainable tensors in construction order (checkpoint manifest order).
    std::vector<NamedTensor> parameters;

    std::size_t parameter_count() const noexcept;
    /// Every Soft MoE layer: modality-x stack, modality-y stack, then the shared stack.
    std::vector<const SoftMoELayerParams*> moe_layers() const;
};

/// Builds the architecture drawing every trainable tensor from `factory`.
CsmoeModel build_model(const CsmoeConfig& cfg, ParamFactory& factory);
/// Truncated-normal(0, 0.02) weights, zero biases/CLS/mask tokens, unit norm gains; seeded by cfg.seed.
CsmoeModel init_model(const CsmoeConfig& cfg);
/// Every tensor (including biases, CLS and mask tokens) drawn at random with the given
/// scale; a generic point for gradient checks.
CsmoeModel random_model(const CsmoeConfig& cfg, std::uint64_t seed, double stddev);
/// Deep copy with independent parameter storage.
CsmoeModel clone_model(const CsmoeModel& model);
/// Names and shapes of all trainable tensors, without allocating them.
std::vector<std::pair<std::string, Shape>> parameter_manifest(const CsmoeConfig& cfg);

struct EncodeResult
{
    Tensor tokens;  // [(|U|+1) × d_enc], CLS first
    std::vector<RoutingTensors> routing;
};

EncodeResult encode(const CsmoeModel& model, const Tensor& image, const MaskPair& mask, Modality modality);

/// Reconstructs all P patches of `target` from encoder output of `source` (encoded with `source_mask`).
Tensor decode(const CsmoeModel& model, const Tensor& encoded, const MaskPair& source_mask, Modality target,
              Modality source);

struct ForwardArtifacts
{
    MaskPair mask_x;
    MaskPair mask_y;
    Tensor target_x;  // [P × ρ²·C_x] reconstruction targets
    Tensor target_y;
    Tensor encoded_x;
    Tensor encoded_y;
    Tensor recon_x_from_x;
    Tensor recon_y_from_y;
    Tensor recon_x_from_y;
    Tensor recon_y_from_x;
    /// x encoder layers, shared layers on x, y encoder layers, shared layers on y.
    std::vector<RoutingTensors> routing;
    Tensor proj_x;  // [1 × d_proj]
    Tensor proj_y;
};

ForwardArtifacts forward(const CsmoeModel& model, const Tensor& x, const Tensor& y, const MaskPair& mask_x,
                         const MaskPair& mask_y);
/// Draws two independent masks from `seed` and runs the four-way forward pass.
ForwardArtifacts forward(const CsmoeModel& model, const Tensor& x, const Tensor& y, std::uint64_t seed);
std::pair<MaskPair, MaskPair> draw_masks(const CsmoeConfig& cfg, std::uint64_t seed);

enum class EmbeddingStrategy
{
    avg_wo_cls,
    avg_all,
    only_cls,
    norm_cls,
    norm_proj_cls,
};

EmbeddingStrategy parse_strategy(const std::string& name);
const char* strategy_name(EmbeddingStrategy s) noexcept;

/// Image-level embedding from encoder tokens (row 0 = CLS). norm_proj_cls needs `projection`.
Tensor build_embedding(const Tensor& tokens, EmbeddingStrategy strategy, const Linear* projection = nullptr);
/// Encodes an unmasked image and reduces it with `strategy`.
Tensor embed_image(const CsmoeModel& model, const Tensor& image, Modality modality, EmbeddingStrategy strategy);

/// Extra state stored alongside the model (optimizer moments, trainer progress).
struct CheckpointExtras
{
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedTensor> tensors;
};

/// File layout: one line of JSON header (config + manifest) followed by TNSR1 blocks.
void save_checkpoint(const CsmoeModel& model, const std::filesystem::path& path, const CheckpointExtras* extras = nullptr);
/// Throws FormatError on truncation, bad header or a manifest that disagrees with the config.
CsmoeModel load_checkpoint(const std::filesystem::path& path, CheckpointExtras* extras = nullptr);

}  // namespace csmoe
