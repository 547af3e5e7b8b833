// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. The regularizers are used exactly as written below, signs included:
//   L_REP = −(1/S²) Σ_ϑ Σ_ϑ' ⟨s̃_ϑ, s̃_ϑ'⟩²          (s̃ = ℓ2-normalized slot embeddings)
//   L_ENT = −(1/SP) Σ_ϑ Σ_n α_ϑn · log(α_ϑn + ε)
//   L_total = L_UMR + L_CMR + L_MI + λ·L_REP + γ·L_ENT
// and the MI denominator excludes the positive pair (q ≠ i) unless
// `mi_include_positive` is set.
#pragma once

#include "csmoe/model.hpp"
#include "csmoe/tensor.hpp"

#include <span>
#include <vector>

namespace csmoe {

struct LossWeights
{
    double lambda = 0.01;
    double gamma = 0.01;
    double tau_mi = 0.5;
    double eps = 1e-8;
    bool mi_include_positive = false;
};

struct LossBreakdown
{
    double umr = 0.0;
    double cmr = 0.0;
    double mi = 0.0;
    double rep = 0.0;
    double ent = 0.0;
    double total = 0.0;
    LossWeights weights;
    Tensor total_tensor;  // differentiable total
};

/// Mean squared error over the rows listed in `mask` (|mask|·K elements).
Tensor rec_loss(const Tensor& pred, const Tensor& target, std::span<const std::size_t> mask);

/// rec(x←x, x, M_x) + rec(y←y, y, M_y)
Tensor loss_umr(const ForwardArtifacts& a);
/// rec(y←x, y, M_x) + rec(x←y, x, M_y): each cross term uses the source modality's mask.
Tensor loss_cmr(const ForwardArtifacts& a);

/// Symmetric contrastive loss over B ≥ 2 paired projections [B×d_proj] with cosine similarity.
Tensor loss_mi(const Tensor& c_x, const Tensor& c_y, double tau, bool include_positive = false);

/// Slot repulsion for one layer's slot embeddings [S×d].
Tensor loss_rep(const Tensor& slot_embeddings);
/// Mean of loss_rep over every MoE layer of the model.
Tensor loss_rep(const CsmoeModel& model);

/// Dispatch entropy for one layer's dispatch weights [S×P]. Negative entries raise InputError.
Tensor loss_ent(const Tensor& dispatch, double eps);
/// Mean of loss_ent over all routing tensors of all artifacts.
Tensor loss_ent(std::span<const ForwardArtifacts> batch, double eps);

/// Reconstruction terms averaged over the batch, MI over the batch's CLS projections.
LossBreakdown loss_total(const CsmoeModel& model, std::span<const ForwardArtifacts> batch, const LossWeights& weights);

}  // namespace csmoe
