// SPDX-License-Identifier: Apache-2.0
#include "csmoe/optim.hpp"

#include "csmoe/errors.hpp"

#include <cmath>
#include <numbers>

namespace csmoe {

AdamW::AdamW(std::vector<NamedTensor> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg)
{
    for (const auto& [name, t] : params_) {
        m_.emplace_back(t.numel(), 0.0);
        v_.emplace_back(t.numel(), 0.0);
    }
}

void AdamW::zero_grad()
{
    for (auto& [name, t] : params_)
        t.zero_grad();
}

void AdamW::step(double lr)
{
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        Tensor& t = params_[p].second;
        const std::vector<double> g = t.grad();
        std::span<double> w = t.mutable_data();
        const double decay = t.rank() >= 2 ? cfg_.weight_decay : 0.0;
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
            w[i] -= lr * (update + decay * w[i]);
        }
    }
}

std::vector<NamedTensor> AdamW::state() const
{
    std::vector<NamedTensor> out;
    for (std::size_t p = 0; p < params_.size(); ++p) {
        out.emplace_back("adam.m." + params_[p].first, Tensor::from(params_[p].second.shape(), m_[p]));
        out.emplace_back("adam.v." + params_[p].first, Tensor::from(params_[p].second.shape(), v_[p]));
    }
    return out;
}

void AdamW::load_state(const std::vector<NamedTensor>& state, std::size_t steps)
{
    if (state.size() != 2 * params_.size())
        throw FormatError("optimizer state has " + std::to_string(state.size()) + " tensors, expected " +
                          std::to_string(2 * params_.size()));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        const auto& [mn, mt] = state[2 * p];
        const auto& [vn, vt] = state[2 * p + 1];
        const auto& [name, t] = params_[p];
        if (mn != "adam.m." + name || vn != "adam.v." + name || mt.shape() != t.shape() || vt.shape() != t.shape())
            throw FormatError("optimizer state does not match parameter \"" + name + "\"");
        m_[p] = mt.to_vector();
        v_[p] = vt.to_vector();
    }
    t_ = steps;
}

double cosine_warmup_lr(double base, std::size_t step, std::size_t total, std::size_t warmup) noexcept
{
    if (step <= warmup && warmup > 0)
        return base * static_cast<double>(step) / static_cast<double>(warmup);
    if (total <= warmup)
        return base;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace csmoe
