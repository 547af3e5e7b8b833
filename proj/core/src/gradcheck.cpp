// SPDX-License-Identifier: Apache-2.0
#include "csmoe/gradcheck.hpp"

#include "csmoe/errors.hpp"
#include "csmoe/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace csmoe {

double relative_error(double analytic, double numeric) noexcept
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const std::function<Tensor()>& loss_fn)
{
    const double v = loss_fn().item();
    if (!std::isfinite(v))
        throw EvaluationError("gradient check: loss evaluated to a non-finite value");
    return v;
}

/// Element indices to probe for each parameter: all of them when the total is within
/// budget, otherwise a proportional seeded sample with a small per-parameter floor.
std::vector<std::vector<std::size_t>> choose_elements(const std::vector<NamedTensor>& params, const GradCheckOptions& opt)
{
    std::size_t total = 0;
    for (const auto& [name, t] : params)
        total += t.numel();
    std::vector<std::vector<std::size_t>> picks(params.size());
    Rng rng(derive_seed(opt.seed, {0x67726164ULL}));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const std::size_t n = params[k].second.numel();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        if (total > opt.max_elements) {
            const auto share = static_cast<std::size_t>(std::llround(static_cast<double>(opt.max_elements) * n / total));
            const std::size_t want = std::min(n, std::max<std::size_t>(share, 8));
            for (std::size_t i = 0; i < want; ++i)
                std::swap(idx[i], idx[i + rng.index(n - i)]);
            idx.resize(want);
            std::sort(idx.begin(), idx.end());
        }
        picks[k] = std::move(idx);
    }
    return picks;
}

}  // namespace

GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, const std::vector<NamedTensor>& params,
                                const GradCheckOptions& options)
{
    GradCheckReport report;
    report.step_size = options.step;

    for (const auto& [name, t] : params) {
        Tensor handle = t;
        handle.zero_grad();
    }
    Tensor loss = loss_fn();
    if (!std::isfinite(loss.item()))
        throw EvaluationError("gradient check: loss evaluated to a non-finite value");
    loss.backward();

    const auto picks = choose_elements(params, options);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor t = params[k].second;
        const std::vector<double> analytic = t.grad();
        auto values = t.mutable_data();
        double worst = 0.0;
        for (std::size_t i : picks[k]) {
            const double saved = values[i];
            values[i] = saved + options.step;
            const double up = evaluate(loss_fn);
            values[i] = saved - options.step;
            const double down = evaluate(loss_fn);
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            worst = std::max(worst, relative_error(analytic[i], numeric));
        }
        report.checked_elements += picks[k].size();
        report.per_parameter_errors[params[k].first] = worst;
        report.max_relative_error = std::max(report.max_relative_error, worst);
    }
    return report;
}

}  // namespace csmoe
