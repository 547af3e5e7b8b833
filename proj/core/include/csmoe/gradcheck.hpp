// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csmoe/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace csmoe {

using NamedTensor = std::pair<std::string, Tensor>;

struct GradCheckReport
{
    double max_relative_error = 0.0;
    std::map<std::string, double> per_parameter_errors;
    double step_size = 0.0;
    std::size_t checked_elements = 0;
};

struct GradCheckOptions
{
    double step = 1e-5;
    /// Above this many parameter elements in total, a seeded subset is checked.
    std::size_t max_elements = 10'000;
    std::uint64_t seed = 0;
};

/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-12)
double relative_error(double analytic, double numeric) noexcept;

/// Compares the tape gradient of `loss_fn` against central differences.
/// `loss_fn` must rebuild its graph on each call from the current parameter values.
/// Throws EvaluationError if any loss evaluation is non-finite.
GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, const std::vector<NamedTensor>& params,
                                const GradCheckOptions& options = {});

}  // namespace csmoe
