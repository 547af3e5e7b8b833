// SPDX-License-Identifier: Apache-2.0
#include "csmoe/losses.hpp"

#include "csmoe/errors.hpp"

namespace csmoe {

Tensor rec_loss(const Tensor& pred, const Tensor& target, std::span<const std::size_t> mask)
{
    if (pred.shape() != target.shape() || pred.rank() != 2)
        throw DimensionError("rec_loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
    if (mask.empty())
        throw ParameterError("rec_loss: empty mask, the loss is undefined");
    return mean(square(sub(gather_rows(pred, mask), gather_rows(target, mask))));
}

Tensor loss_umr(const ForwardArtifacts& a)
{
    return add(rec_loss(a.recon_x_from_x, a.target_x, a.mask_x.masked), rec_loss(a.recon_y_from_y, a.target_y, a.mask_y.masked));
}

Tensor loss_cmr(const ForwardArtifacts& a)
{
    return add(rec_loss(a.recon_y_from_x, a.target_y, a.mask_x.masked), rec_loss(a.recon_x_from_y, a.target_x, a.mask_y.masked));
}

Tensor loss_mi(const Tensor& c_x, const Tensor& c_y, double tau, bool include_positive)
{
    if (c_x.rank() != 2 || c_x.shape() != c_y.shape())
        throw DimensionError("loss_mi: projections " + shape_str(c_x.shape()) + " vs " + shape_str(c_y.shape()));
    const std::size_t batch = c_x.dim(0);
    if (batch < 2)
        throw ParameterError("loss_mi: batch of " + std::to_string(batch) + " has no negatives, need at least 2 pairs");
    if (!(tau > 0.0))
        throw ParameterError("loss_mi: temperature must be positive");

    const Tensor logits = scale(matmul_nt(l2_normalize_rows(c_x), l2_normalize_rows(c_y)), 1.0 / tau);
    std::vector<double> keep(batch * batch, 1.0), diag(batch * batch, 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
        diag[i * batch + i] = 1.0;
        if (!include_positive)
            keep[i * batch + i] = 0.0;
    }
    const Tensor denom_terms = mul(exp(logits), Tensor::from({batch, batch}, std::move(keep)));
    const Tensor positives = sum_axis(mul(logits, Tensor::from({batch, batch}, std::move(diag))), 1);
    // Row i: c_i^x against all c_q^y. Column i: c_i^y against all c_q^x.
    const Tensor x_to_y = sub(log(sum_axis(denom_terms, 1)), positives);
    const Tensor y_to_x = sub(log(sum_axis(denom_terms, 0)), positives);
    return scale(add(sum(x_to_y), sum(y_to_x)), 1.0 / (2.0 * static_cast<double>(batch)));
}

Tensor loss_rep(const Tensor& slot_embeddings)
{
    if (slot_embeddings.rank() != 2 || slot_embeddings.dim(0) == 0)
        throw DimensionError("loss_rep: slot embeddings " + shape_str(slot_embeddings.shape()));
    const Tensor unit = l2_normalize_rows(slot_embeddings);
    return neg(mean(square(matmul_nt(unit, unit))));
}

Tensor loss_rep(const CsmoeModel& model)
{
    const auto layers = model.moe_layers();
    std::vector<Tensor> terms;
    for (const auto* layer : layers)
        terms.push_back(reshape(loss_rep(layer->slot_embeddings), {1, 1}));
    return mean(concat_rows(terms));
}

Tensor loss_ent(const Tensor& dispatch, double eps)
{
    if (!(eps > 0.0))
        throw ParameterError("loss_ent: eps must be positive");
    for (double v : dispatch.data())
        if (v < 0.0)
            throw InputError("loss_ent: negative dispatch weight " + std::to_string(v));
    return neg(mean(mul(dispatch, log(add_scalar(dispatch, eps)))));
}

Tensor loss_ent(std::span<const ForwardArtifacts> batch, double eps)
{
    std::vector<Tensor> terms;
    for (const auto& a : batch)
        for (const auto& r : a.routing)
            terms.push_back(reshape(loss_ent(r.dispatch, eps), {1, 1}));
    if (terms.empty())
        throw DimensionError("loss_ent: no routing tensors in batch");
    return mean(concat_rows(terms));
}

LossBreakdown loss_total(const CsmoeModel& model, std::span<const ForwardArtifacts> batch, const LossWeights& weights)
{
    if (batch.empty())
        throw DimensionError("loss_total: empty batch");
    const double inv_batch = 1.0 / static_cast<double>(batch.size());

    std::vector<Tensor> umr_terms, cmr_terms, proj_x, proj_y;
    for (const auto& a : batch) {
        umr_terms.push_back(reshape(loss_umr(a), {1, 1}));
        cmr_terms.push_back(reshape(loss_cmr(a), {1, 1}));
        proj_x.push_back(a.proj_x);
        proj_y.push_back(a.proj_y);
    }
    const Tensor umr = scale(sum(concat_rows(umr_terms)), inv_batch);
    const Tensor cmr = scale(sum(concat_rows(cmr_terms)), inv_batch);
    const Tensor mi = loss_mi(concat_rows(proj_x), concat_rows(proj_y), weights.tau_mi, weights.mi_include_positive);
    const Tensor rep = loss_rep(model);
    const Tensor ent = loss_ent(batch, weights.eps);

    LossBreakdown out;
    out.weights = weights;
    out.total_tensor = add(add(add(add(umr, cmr), mi), scale(rep, weights.lambda)), scale(ent, weights.gamma));
    out.umr = umr.item();
    out.cmr = cmr.item();
    out.mi = mi.item();
    out.rep = rep.item();
    out.ent = ent.item();
    out.total = out.total_tensor.item();
    return out;
}

}  // namespace csmoe
