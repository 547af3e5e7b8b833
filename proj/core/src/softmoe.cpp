// SPDX-License-Identifier: Apache-2.0
#include "csmoe/softmoe.hpp"

#include "csmoe/errors.hpp"

#include <cmath>

namespace csmoe {

Tensor apply(const Linear& layer, const Tensor& x)
{
    return add_row(matmul(x, layer.weight), layer.bias);
}

Tensor apply(const LayerNormParams& norm, const Tensor& x)
{
    return layer_norm(x, norm.gain, norm.bias, 1e-6);
}

Tensor attention_forward(const Tensor& z, const AttentionParams& params)
{
    if (z.rank() != 2)
        throw DimensionError("attention: expected [T×d] tokens, got " + shape_str(z.shape()));
    const std::size_t d = z.dim(1);
    if (params.heads == 0 || d % params.heads != 0)
        throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(params.heads) +
                             " heads");
    const std::size_t head_dim = d / params.heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_dim));

    const Tensor q = matmul(z, params.wq);
    const Tensor k = matmul(z, params.wk);
    const Tensor v = matmul(z, params.wv);
    std::vector<Tensor> heads;
    heads.reserve(params.heads);
    for (std::size_t h = 0; h < params.heads; ++h) {
        const Tensor qh = slice_cols(q, h * head_dim, head_dim);
        const Tensor kh = slice_cols(k, h * head_dim, head_dim);
        const Tensor vh = slice_cols(v, h * head_dim, head_dim);
        const Tensor weights = softmax(scale(matmul_nt(qh, kh), scale_factor), 1);
        heads.push_back(matmul(weights, vh));
    }
    const Tensor merged = params.heads == 1 ? heads[0] : concat_cols(heads);
    return apply(params.out, merged);
}

Tensor expert_forward(const ExpertParams& expert, const Tensor& x, Activation activation)
{
    ++op_counters().expert_calls;
    Tensor hidden = apply(expert.fc1, x);
    if (activation == Activation::gelu)
        hidden = gelu(hidden);
    return apply(expert.fc2, hidden);
}

void validate(const SoftMoELayerParams& params)
{
    if (params.slot_embeddings.rank() != 2 || params.slot_embeddings.dim(0) < 1)
        throw ParameterError("soft MoE: need at least one slot, slot embeddings are " +
                             shape_str(params.slot_embeddings.shape()));
    if (params.experts.empty())
        throw ParameterError("soft MoE: need at least one expert");
    if (!(params.temperature > 0.0))
        throw ParameterError("soft MoE: dispatch temperature must be positive");
    if (params.slot_to_expert.size() != params.slot_count())
        throw ParameterError("soft MoE: slot_to_expert has " + std::to_string(params.slot_to_expert.size()) +
                             " entries for " + std::to_string(params.slot_count()) + " slots");
    for (std::size_t e : params.slot_to_expert)
        if (e >= params.experts.size())
            throw ParameterError("soft MoE: slot assigned to expert " + std::to_string(e) + " of " +
                                 std::to_string(params.experts.size()));
}

RoutingTensors route(const Tensor& z, const SoftMoELayerParams& params)
{
    validate(params);
    if (z.rank() != 2 || z.dim(1) != params.slot_embeddings.dim(1))
        throw DimensionError("soft MoE: tokens " + shape_str(z.shape()) + " do not match slot embeddings " +
                             shape_str(params.slot_embeddings.shape()));
    RoutingTensors r;
    r.logits = matmul_nt(params.slot_embeddings, z);
    r.dispatch = softmax(r.logits, 1, params.temperature);
    r.combine = softmax(r.logits, 0, 1.0);
    r.slots = matmul(r.dispatch, z);
    return r;
}

MoeOutput moe_forward(const Tensor& z, const SoftMoELayerParams& params)
{
    MoeOutput out;
    out.routing = route(z, params);
    const std::size_t slots = params.slot_count();
    std::vector<Tensor> expert_out;
    expert_out.reserve(slots);
    for (std::size_t s = 0; s < slots; ++s)
        expert_out.push_back(
            expert_forward(params.experts[params.slot_to_expert[s]], slice_rows(out.routing.slots, s, 1), params.activation));
    const Tensor stacked = slots == 1 ? expert_out[0] : concat_rows(expert_out);
    out.output = matmul_tn(out.routing.combine, stacked);
    return out;
}

MoeOutput block_forward(const Tensor& z, const MoeBlockParams& params)
{
    const Tensor attended = add(z, attention_forward(apply(params.norm1, z), params.attention));
    MoeOutput moe = moe_forward(apply(params.norm2, attended), params.moe);
    moe.output = add(attended, moe.output);
    return moe;
}

Tensor mlp_block_forward(const Tensor& z, const MlpBlockParams& params)
{
    const Tensor attended = add(z, attention_forward(apply(params.norm1, z), params.attention));
    const Tensor hidden = gelu(apply(params.fc1, apply(params.norm2, attended)));
    return add(attended, apply(params.fc2, hidden));
}

Linear build_linear(ParamFactory& f, const std::string& prefix, std::size_t in, std::size_t out)
{
    return {f.make(prefix + ".weight", {in, out}, Init::normal), f.make(prefix + ".bias", {out}, Init::zeros)};
}

LayerNormParams build_layer_norm(ParamFactory& f, const std::string& prefix, std::size_t dim)
{
    return {f.make(prefix + ".gain", {dim}, Init::ones), f.make(prefix + ".bias", {dim}, Init::zeros)};
}

AttentionParams build_attention(ParamFactory& f, const std::string& prefix, std::size_t dim, std::size_t heads)
{
    AttentionParams a;
    a.wq = f.make(prefix + ".wq", {dim, dim}, Init::normal);
    a.wk = f.make(prefix + ".wk", {dim, dim}, Init::normal);
    a.wv = f.make(prefix + ".wv", {dim, dim}, Init::normal);
    a.out = build_linear(f, prefix + ".out", dim, dim);
    a.heads = heads;
    return a;
}

SoftMoELayerParams build_moe_layer(ParamFactory& f, const std::string& prefix, const SoftMoEShape& shape)
{
    SoftMoELayerParams p;
    p.slot_embeddings = f.make(prefix + ".slots", {shape.slots, shape.dim}, Init::normal);
    for (std::size_t e = 0; e < shape.experts; ++e) {
        const std::string ep = prefix + ".expert" + std::to_string(e);
        p.experts.push_back({build_linear(f, ep + ".fc1", shape.dim, shape.hidden), build_linear(f, ep + ".fc2", shape.hidden, shape.dim)});
    }
    p.temperature = shape.temperature;
    p.activation = shape.activation;
    p.slot_to_expert.resize(shape.slots);
    for (std::size_t s = 0; s < shape.slots; ++s)
        p.slot_to_expert[s] = s % std::max<std::size_t>(shape.experts, 1);
    return p;
}

MoeBlockParams build_moe_block(ParamFactory& f, const std::string& prefix, const SoftMoEShape& shape, std::size_t heads)
{
    MoeBlockParams b;
    b.norm1 = build_layer_norm(f, prefix + ".norm1", shape.dim);
    b.attention = build_attention(f, prefix + ".attn", shape.dim, heads);
    b.norm2 = build_layer_norm(f, prefix + ".norm2", shape.dim);
    b.moe = build_moe_layer(f, prefix + ".moe", shape);
    return b;
}

MlpBlockParams build_mlp_block(ParamFactory& f, const std::string& prefix, std::size_t dim, std::size_t hidden,
                               std::size_t heads)
{
    MlpBlockParams b;
    b.norm1 = build_layer_norm(f, prefix + ".norm1", dim);
    b.attention = build_attention(f, prefix + ".attn", dim, heads);
    b.norm2 = build_layer_norm(f, prefix + ".norm2", dim);
    b.fc1 = build_linear(f, prefix + ".fc1", dim, hidden);
    b.fc2 = build_linear(f, prefix + ".fc2", hidden, dim);
    return b;
}

}  // namespace csmoe
