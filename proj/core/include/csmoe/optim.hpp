// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csmoe/gradcheck.hpp"
#include "csmoe/tensor.hpp"

#include <cstddef>
#include <vector>

namespace csmoe {

struct AdamWConfig
{
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Decoupled decay; applied to rank ≥ 2 tensors (weights, tables) only.
    double weight_decay = 0.05;
};

class AdamW
{
public:
    AdamW(std::vector<NamedTensor> params, AdamWConfig cfg);

    /// One update from the gradients currently stored on the parameters.
    void step(double lr);
    void zero_grad();

    std::size_t steps() const noexcept { return t_; }
    /// First and second moments as "adam.m.<name>" / "adam.v.<name>" tensors.
    std::vector<NamedTensor> state() const;
    /// Restores moments written by state(); FormatError on any mismatch.
    void load_state(const std::vector<NamedTensor>& state, std::size_t steps);

private:
    std::vector<NamedTensor> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

/// Learning rate at 1-based `step`: linear ramp to `base` over `warmup` steps, then
/// cosine decay to zero at `total`.
double cosine_warmup_lr(double base, std::size_t step, std::size_t total, std::size_t warmup) noexcept;

}  // namespace csmoe
