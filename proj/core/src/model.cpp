// SPDX-License-Identifier: Apache-2.0
#include "csmoe/model.hpp"

#include "csmoe/errors.hpp"
#include "csmoe/rng.hpp"
#include "csmoe/tnsr_io.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace csmoe {

const char* modality_name(Modality m) noexcept
{
    return m == Modality::x ? "x" : "y";
}

// ---- config ---------------------------------------------------------------

void CsmoeConfig::validate() const
{
    const auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (patch_size == 0)
        fail("patch_size must be positive");
    if (image_side == 0 || image_side % patch_size != 0)
        fail("image_side " + std::to_string(image_side) + " is not divisible by patch_size " + std::to_string(patch_size));
    if (channels_x == 0 || channels_y == 0)
        fail("channel counts must be positive");
    if (d_enc == 0 || d_enc % 4 != 0 || d_dec == 0 || d_dec % 4 != 0)
        fail("d_enc and d_dec must be positive multiples of 4");
    if (heads == 0 || d_enc % heads != 0)
        fail("d_enc " + std::to_string(d_enc) + " is not divisible by heads " + std::to_string(heads));
    if (dec_heads == 0 || d_dec % dec_heads != 0)
        fail("d_dec " + std::to_string(d_dec) + " is not divisible by dec_heads " + std::to_string(dec_heads));
    if (enc_ms_layers == 0 || enc_cs_layers == 0 || dec_layers == 0)
        fail("all layer counts must be at least 1");
    if (slots == 0 || experts == 0)
        fail("slots and experts must be at least 1");
    if (expert_hidden == 0 || dec_mlp_hidden == 0 || d_proj == 0)
        fail("hidden and projection widths must be positive");
    if (!(temperature > 0.0))
        fail("temperature must be positive");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
        fail("mask_ratio must lie in (0, 1)");
}

nlohmann::json config_to_json(const CsmoeConfig& c)
{
    return {
        {"patch_size", c.patch_size},
        {"image_side", c.image_side},
        {"channels_x", c.channels_x},
        {"channels_y", c.channels_y},
        {"d_enc", c.d_enc},
        {"d_dec", c.d_dec},
        {"enc_ms_layers", c.enc_ms_layers},
        {"enc_cs_layers", c.enc_cs_layers},
        {"dec_layers", c.dec_layers},
        {"slots", c.slots},
        {"experts", c.experts},
        {"heads", c.heads},
        {"dec_heads", c.dec_heads},
        {"expert_hidden", c.expert_hidden},
        {"dec_mlp_hidden", c.dec_mlp_hidden},
        {"temperature", c.temperature},
        {"mask_ratio", c.mask_ratio},
        {"d_proj", c.d_proj},
        {"seed", c.seed},
        {"norm_pix", c.norm_pix},
    };
}

CsmoeConfig config_from_json(const nlohmann::json& j)
{
    if (!j.is_object())
        throw ConfigError("model config must be a JSON object");
    CsmoeConfig c;
    const nlohmann::json defaults = config_to_json(c);
    for (const auto& [key, value] : j.items())
        if (!defaults.contains(key))
            throw ConfigError("model config: unknown key \"" + key + "\"");
    try {
        const auto get = [&](const char* key, auto& field) {
            if (j.contains(key))
                field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("patch_size", c.patch_size);
        get("image_side", c.image_side);
        get("channels_x", c.channels_x);
        get("channels_y", c.channels_y);
        get("d_enc", c.d_enc);
        get("d_dec", c.d_dec);
        get("enc_ms_layers", c.enc_ms_layers);
        get("enc_cs_layers", c.enc_cs_layers);
        get("dec_layers", c.dec_layers);
        get("slots", c.slots);
        get("experts", c.experts);
        get("heads", c.heads);
        get("dec_heads", c.dec_heads);
        get("expert_hidden", c.expert_hidden);
        get("dec_mlp_hidden", c.dec_mlp_hidden);
        get("temperature", c.temperature);
        get("mask_ratio", c.mask_ratio);
        get("d_proj", c.d_proj);
        get("seed", c.seed);
        get("norm_pix", c.norm_pix);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return c;
}

// ---- construction ---------------------------------------------------------

namespace {

/// Forwards to another factory and keeps every tensor it hands out.
class CollectingFactory final : public ParamFactory
{
public:
    explicit CollectingFactory(ParamFactory& inner) : inner_(inner) {}

    Tensor make(const std::string& name, const Shape& shape, Init init) override
    {
        Tensor t = inner_.make(name, shape, init);
        collected.emplace_back(name, t);
        return t;
    }

    std::vector<NamedTensor> collected;

private:
    ParamFactory& inner_;
};

/// Hands out copies of an existing parameter list, in order.
class CopyFactory final : public ParamFactory
{
public:
    explicit CopyFactory(const std::vector<NamedTensor>& source) : source_(source) {}

    Tensor make(const std::string& name, const Shape& shape, Init) override
    {
        if (next_ >= source_.size() || source_[next_].first != name || source_[next_].second.shape() != shape)
            throw FormatError("parameter \"" + name + "\" " + shape_str(shape) + " does not match the source layout");
        return source_[next_++].second.clone_parameter();
    }

private:
    const std::vector<NamedTensor>& source_;
    std::size_t next_ = 0;
};

SoftMoEShape moe_shape(const CsmoeConfig& cfg)
{
    return {cfg.d_enc, cfg.expert_hidden, cfg.slots, cfg.experts, cfg.temperature, Activation::gelu};
}

}  // namespace

std::size_t CsmoeModel::parameter_count() const noexcept
{
    std::size_t n = 0;
    for (const auto& [name, t] : parameters)
        n += t.numel();
    return n;
}

std::vector<const SoftMoELayerParams*> CsmoeModel::moe_layers() const
{
    std::vector<const SoftMoELayerParams*> layers;
    for (const auto& enc : encoders)
        for (const auto& b : enc.blocks)
            layers.push_back(&b.moe);
    for (const auto& b : cross_sensor)
        layers.push_back(&b.moe);
    return layers;
}

CsmoeModel build_model(const CsmoeConfig& cfg, ParamFactory& factory)
{
    cfg.validate();
    CollectingFactory f(factory);
    CsmoeModel m;
    m.config = cfg;
    const SoftMoEShape shape = moe_shape(cfg);
    const std::size_t grid = cfg.grid();

    for (Modality mod : {Modality::x, Modality::y}) {
        const std::string p = std::string("enc.") + modality_name(mod);
        EncoderPath& e = m.encoders[static_cast<std::size_t>(mod)];
        e.patch_embed = build_linear(f, p + ".patch_embed", cfg.token_width(mod), cfg.d_enc);
        e.cls = f.make(p + ".cls", {cfg.d_enc}, Init::zeros);
        e.positions = positional_embedding(grid, grid, cfg.d_enc);
        for (std::size_t l = 0; l < cfg.enc_ms_layers; ++l)
            e.blocks.push_back(build_moe_block(f, p + ".block" + std::to_string(l), shape, cfg.heads));
    }
    for (std::size_t l = 0; l < cfg.enc_cs_layers; ++l)
        m.cross_sensor.push_back(build_moe_block(f, "enc.cs.block" + std::to_string(l), shape, cfg.heads));

    for (Modality mod : {Modality::x, Modality::y}) {
        const std::string p = std::string("dec.") + modality_name(mod);
        DecoderPath& d = m.decoders[static_cast<std::size_t>(mod)];
        d.from_encoder = build_linear(f, p + ".from_encoder", cfg.d_enc, cfg.d_dec);
        d.mask_token = f.make(p + ".mask_token", {cfg.d_dec}, Init::zeros);
        d.positions = positional_embedding(grid, grid, cfg.d_dec);
        for (std::size_t l = 0; l < cfg.dec_layers; ++l)
            d.blocks.push_back(build_mlp_block(f, p + ".block" + std::to_string(l), cfg.d_dec, cfg.dec_mlp_hidden, cfg.dec_heads));
        for (Modality src : {Modality::x, Modality::y})
            d.heads[static_cast<std::size_t>(src)] =
                build_linear(f, p + ".head_from_" + modality_name(src), cfg.d_dec, cfg.token_width(mod));
    }
    m.projection = build_linear(f, "proj", cfg.d_enc, cfg.d_proj);
    m.parameters = std::move(f.collected);
    return m;
}

CsmoeModel init_model(const CsmoeConfig& cfg)
{
    RandomInit factory(derive_seed(cfg.seed, {0x696e6974ULL}));
    return build_model(cfg, factory);
}

CsmoeModel random_model(const CsmoeConfig& cfg, std::uint64_t seed, double stddev)
{
    FullyRandomInit factory(derive_seed(seed, {0x72616e64ULL}), stddev);
    return build_model(cfg, factory);
}

CsmoeModel clone_model(const CsmoeModel& model)
{
    CopyFactory factory(model.parameters);
    return build_model(model.config, factory);
}

std::vector<std::pair<std::string, Shape>> parameter_manifest(const CsmoeConfig& cfg)
{
    ShapeRecorder recorder;
    build_model(cfg, recorder);
    return recorder.recorded();
}

// ---- forward --------------------------------------------------------------

namespace {

void check_image(const CsmoeConfig& cfg, const Tensor& image, Modality m)
{
    const Shape expected{cfg.channels(m), cfg.image_side, cfg.image_side};
    if (image.shape() != expected)
        throw DimensionError(std::string("modality ") + modality_name(m) + " expects images of shape " + shape_str(expected) +
                             ", got " + shape_str(image.shape()));
}

void check_mask(const MaskPair& mask, std::size_t tokens)
{
    if (mask.masked.size() + mask.unmasked.size() != tokens)
        throw DimensionError("mask covers " + std::to_string(mask.masked.size() + mask.unmasked.size()) + " positions, grid has " +
                             std::to_string(tokens));
    for (std::size_t i : mask.unmasked)
        if (i >= tokens)
            throw DimensionError("mask position " + std::to_string(i) + " outside grid of " + std::to_string(tokens));
}

Tensor normalize_patches(const Tensor& patches)
{
    const std::size_t rows = patches.dim(0), width = patches.dim(1);
    std::vector<double> out(patches.data().begin(), patches.data().end());
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0, var = 0.0;
        for (std::size_t j = 0; j < width; ++j)
            mu += out[r * width + j];
        mu /= static_cast<double>(width);
        for (std::size_t j = 0; j < width; ++j)
            var += (out[r * width + j] - mu) * (out[r * width + j] - mu);
        var /= static_cast<double>(width);
        const double inv = 1.0 / std::sqrt(var + 1e-6);
        for (std::size_t j = 0; j < width; ++j)
            out[r * width + j] = (out[r * width + j] - mu) * inv;
    }
    return Tensor::from(patches.shape(), std::move(out));
}

}  // namespace

EncodeResult encode(const CsmoeModel& model, const Tensor& image, const MaskPair& mask, Modality modality)
{
    const CsmoeConfig& cfg = model.config;
    check_image(cfg, image, modality);
    check_mask(mask, cfg.tokens());
    const EncoderPath& enc = model.encoders[static_cast<std::size_t>(modality)];

    // Hidden patches never enter the graph.
    const Tensor visible = gather_rows(patchify(image, cfg.patch_size).tokens, mask.unmasked);
    Tensor tokens = add(apply(enc.patch_embed, visible), gather_rows(enc.positions, mask.unmasked));
    tokens = concat_rows({reshape(enc.cls, {1, cfg.d_enc}), tokens});

    EncodeResult out;
    for (const auto& block : enc.blocks) {
        MoeOutput r = block_forward(tokens, block);
        tokens = r.output;
        out.routing.push_back(std::move(r.routing));
    }
    for (const auto& block : model.cross_sensor) {
        MoeOutput r = block_forward(tokens, block);
        tokens = r.output;
        out.routing.push_back(std::move(r.routing));
    }
    out.tokens = tokens;
    return out;
}

Tensor decode(const CsmoeModel& model, const Tensor& encoded, const MaskPair& source_mask, Modality target, Modality source)
{
    const CsmoeConfig& cfg = model.config;
    check_mask(source_mask, cfg.tokens());
    if (encoded.rank() != 2 || encoded.dim(0) != source_mask.unmasked.size() + 1 || encoded.dim(1) != cfg.d_enc)
        throw DimensionError("decode: encoder output " + shape_str(encoded.shape()) + " inconsistent with " +
                             std::to_string(source_mask.unmasked.size()) + " visible tokens plus CLS");
    const DecoderPath& dec = model.decoders[static_cast<std::size_t>(target)];

    const Tensor projected = apply(dec.from_encoder, encoded);
    const Tensor visible = slice_rows(projected, 1, source_mask.unmasked.size());
    Tensor seq = add(scatter_rows(visible, source_mask.unmasked, cfg.tokens(), dec.mask_token), dec.positions);
    for (const auto& block : dec.blocks)
        seq = mlp_block_forward(seq, block);
    return apply(dec.heads[static_cast<std::size_t>(source)], seq);
}

std::pair<MaskPair, MaskPair> draw_masks(const CsmoeConfig& cfg, std::uint64_t seed)
{
    return {sample_masks(cfg.tokens(), cfg.mask_ratio, derive_seed(seed, {0x78ULL})),
            sample_masks(cfg.tokens(), cfg.mask_ratio, derive_seed(seed, {0x79ULL}))};
}

ForwardArtifacts forward(const CsmoeModel& model, const Tensor& x, const Tensor& y, const MaskPair& mask_x, const MaskPair& mask_y)
{
    const CsmoeConfig& cfg = model.config;
    ForwardArtifacts a;
    a.mask_x = mask_x;
    a.mask_y = mask_y;

    EncodeResult ex = encode(model, x, mask_x, Modality::x);
    EncodeResult ey = encode(model, y, mask_y, Modality::y);
    a.encoded_x = ex.tokens;
    a.encoded_y = ey.tokens;
    a.routing = std::move(ex.routing);
    a.routing.insert(a.routing.end(), std::make_move_iterator(ey.routing.begin()), std::make_move_iterator(ey.routing.end()));

    a.recon_x_from_x = decode(model, a.encoded_x, mask_x, Modality::x, Modality::x);
    a.recon_y_from_y = decode(model, a.encoded_y, mask_y, Modality::y, Modality::y);
    a.recon_x_from_y = decode(model, a.encoded_y, mask_y, Modality::x, Modality::y);
    a.recon_y_from_x = decode(model, a.encoded_x, mask_x, Modality::y, Modality::x);

    a.target_x = patchify(x, cfg.patch_size).tokens;
    a.target_y = patchify(y, cfg.patch_size).tokens;
    if (cfg.norm_pix) {
        a.target_x = normalize_patches(a.target_x);
        a.target_y = normalize_patches(a.target_y);
    }

    a.proj_x = apply(model.projection, slice_rows(a.encoded_x, 0, 1));
    a.proj_y = apply(model.projection, slice_rows(a.encoded_y, 0, 1));
    return a;
}

ForwardArtifacts forward(const CsmoeModel& model, const Tensor& x, const Tensor& y, std::uint64_t seed)
{
    auto [mx, my] = draw_masks(model.config, seed);
    return forward(model, x, y, mx, my);
}

// ---- embeddings -----------------------------------------------------------

EmbeddingStrategy parse_strategy(const std::string& name)
{
    if (name == "avg_wo_cls")
        return EmbeddingStrategy::avg_wo_cls;
    if (name == "avg_all")
        return EmbeddingStrategy::avg_all;
    if (name == "only_cls")
        return EmbeddingStrategy::only_cls;
    if (name == "norm_cls")
        return EmbeddingStrategy::norm_cls;
    if (name == "norm_proj_cls")
        return EmbeddingStrategy::norm_proj_cls;
    throw ParameterError("unknown embedding strategy \"" + name + "\"");
}

const char* strategy_name(EmbeddingStrategy s) noexcept
{
    switch (s) {
    case EmbeddingStrategy::avg_wo_cls: return "avg_wo_cls";
    case EmbeddingStrategy::avg_all: return "avg_all";
    case EmbeddingStrategy::only_cls: return "only_cls";
    case EmbeddingStrategy::norm_cls: return "norm_cls";
    case EmbeddingStrategy::norm_proj_cls: return "norm_proj_cls";
    }
    return "?";
}

Tensor build_embedding(const Tensor& tokens, EmbeddingStrategy strategy, const Linear* projection)
{
    if (tokens.rank() != 2 || tokens.dim(0) == 0)
        throw DimensionError("build_embedding: empty token sequence " + shape_str(tokens.shape()));
    const std::size_t rows = tokens.dim(0), width = tokens.dim(1);
    switch (strategy) {
    case EmbeddingStrategy::avg_wo_cls:
        if (rows < 2)
            throw DimensionError("build_embedding: avg_wo_cls needs at least one non-CLS row");
        return scale(sum_axis(slice_rows(tokens, 1, rows - 1), 0), 1.0 / static_cast<double>(rows - 1));
    case EmbeddingStrategy::avg_all:
        return scale(sum_axis(tokens, 0), 1.0 / static_cast<double>(rows));
    case EmbeddingStrategy::only_cls:
        return reshape(slice_rows(tokens, 0, 1), {width});
    case EmbeddingStrategy::norm_cls:
        return reshape(l2_normalize_rows(slice_rows(tokens, 0, 1)), {width});
    case EmbeddingStrategy::norm_proj_cls: {
        if (projection == nullptr)
            throw ParameterError("build_embedding: norm_proj_cls requires the projection head");
        const Tensor projected = apply(*projection, l2_normalize_rows(slice_rows(tokens, 0, 1)));
        return reshape(l2_normalize_rows(projected), {projected.dim(1)});
    }
    }
    throw ParameterError("build_embedding: unknown strategy");
}

Tensor embed_image(const CsmoeModel& model, const Tensor& image, Modality modality, EmbeddingStrategy strategy)
{
    const EncodeResult enc = encode(model, image, no_mask(model.config.tokens()), modality);
    return build_embedding(enc.tokens, strategy, &model.projection).detach();
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr const char* kCheckpointFormat = "CSMOE-CKPT";
constexpr int kCheckpointVersion = 1;

nlohmann::json manifest_json(const std::vector<NamedTensor>& tensors)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [name, t] : tensors)
        arr.push_back({{"name", name}, {"shape", t.shape()}});
    return arr;
}

/// Serves tensors already read from disk, checking them against the construction order.
class PreloadedFactory final : public ParamFactory
{
public:
    explicit PreloadedFactory(std::vector<NamedTensor> tensors) : tensors_(std::move(tensors)) {}

    Tensor make(const std::string& name, const Shape& shape, Init) override
    {
        if (next_ >= tensors_.size())
            throw FormatError("checkpoint: missing parameter \"" + name + "\"");
        const auto& [stored_name, t] = tensors_[next_++];
        if (stored_name != name || t.shape() != shape)
            throw FormatError("checkpoint: expected \"" + name + "\" " + shape_str(shape) + ", found \"" + stored_name + "\" " +
                              shape_str(t.shape()));
        return t.clone_parameter();
    }

    bool exhausted() const noexcept { return next_ == tensors_.size(); }

private:
    std::vector<NamedTensor> tensors_;
    std::size_t next_ = 0;
};

std::vector<NamedTensor> read_blocks(std::istream& is, const nlohmann::json& manifest, const char* what)
{
    std::vector<NamedTensor> out;
    for (const auto& entry : manifest) {
        const std::string name = entry.at("name").get<std::string>();
        const Shape shape = entry.at("shape").get<Shape>();
        Tensor t;
        try {
            t = read_tnsr(is);
        } catch (const FormatError& e) {
            throw FormatError(std::string("checkpoint: ") + what + " \"" + name + "\": " + e.what());
        }
        if (t.shape() != shape)
            throw FormatError("checkpoint: block for \"" + name + "\" has shape " + shape_str(t.shape()) + ", header says " +
                              shape_str(shape));
        out.emplace_back(name, std::move(t));
    }
    return out;
}

}  // namespace

void save_checkpoint(const CsmoeModel& model, const std::filesystem::path& path, const CheckpointExtras* extras)
{
    nlohmann::json header = {
        {"format", kCheckpointFormat},
        {"version", kCheckpointVersion},
        {"config", config_to_json(model.config)},
        {"params", manifest_json(model.parameters)},
        {"extras", manifest_json(extras ? extras->tensors : std::vector<NamedTensor>{})},
        {"meta", extras ? extras->meta : nlohmann::json::object()},
    };
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw FormatError("cannot open " + path.string() + " for writing");
    os << header.dump() << '\n';
    for (const auto& [name, t] : model.parameters)
        write_tnsr(os, t);
    if (extras)
        for (const auto& [name, t] : extras->tensors)
            write_tnsr(os, t);
    if (!os)
        throw FormatError("failed writing checkpoint " + path.string());
}

CsmoeModel load_checkpoint(const std::filesystem::path& path, CheckpointExtras* extras)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw FormatError("cannot open checkpoint " + path.string());
    std::string line;
    if (!std::getline(is, line))
        throw FormatError(path.string() + ": empty checkpoint");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
        if (header.at("format") != kCheckpointFormat)
            throw FormatError(path.string() + ": not a CSMoE checkpoint");
        if (header.at("version") != kCheckpointVersion)
            throw FormatError(path.string() + ": unsupported checkpoint version " + header.at("version").dump());

        CsmoeConfig cfg;
        try {
            cfg = config_from_json(header.at("config"));
            cfg.validate();
        } catch (const ConfigError& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
        const auto expected = parameter_manifest(cfg);
        const auto& manifest = header.at("params");
        if (manifest.size() != expected.size())
            throw FormatError(path.string() + ": manifest lists " + std::to_string(manifest.size()) + " tensors, config implies " +
                              std::to_string(expected.size()));
        for (std::size_t i = 0; i < expected.size(); ++i)
            if (manifest[i].at("name").get<std::string>() != expected[i].first ||
                manifest[i].at("shape").get<Shape>() != expected[i].second)
                throw FormatError(path.string() + ": manifest entry " + std::to_string(i) + " disagrees with the config");

        std::vector<NamedTensor> params = read_blocks(is, manifest, "parameter");
        std::vector<NamedTensor> extra_tensors = read_blocks(is, header.value("extras", nlohmann::json::array()), "extra tensor");

        PreloadedFactory factory(std::move(params));
        CsmoeModel model = build_model(cfg, factory);
        if (extras) {
            extras->meta = header.value("meta", nlohmann::json::object());
            extras->tensors = std::move(extra_tensors);
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed checkpoint header: " + e.what());
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        if (msg.rfind(path.string(), 0) == 0)
            throw;
        throw FormatError(path.string() + ": " + msg);
    }
}

}  // namespace csmoe
