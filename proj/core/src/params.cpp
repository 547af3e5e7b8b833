// SPDX-License-Identifier: Apache-2.0
#include "csmoe/params.hpp"

namespace csmoe {

Tensor RandomInit::make(const std::string& name, const Shape& shape, Init init)
{
    std::vector<double> values(shape_numel(shape), init == Init::ones ? 1.0 : 0.0);
    if (init == Init::normal)
        for (double& v : values)
            v = rng_.truncated_normal(stddev_);
    Tensor t = Tensor::parameter(shape, std::move(values));
    created_.emplace_back(name, t);
    return t;
}

Tensor FullyRandomInit::make(const std::string&, const Shape& shape, Init init)
{
    std::vector<double> values(shape_numel(shape));
    for (double& v : values)
        v = (init == Init::ones ? 1.0 : 0.0) + rng_.truncated_normal(stddev_);
    return Tensor::parameter(shape, std::move(values));
}

Tensor ShapeRecorder::make(const std::string& name, const Shape& shape, Init)
{
    recorded_.emplace_back(name, shape);
    return Tensor();
}

std::size_t ShapeRecorder::total_elements() const noexcept
{
    std::size_t n = 0;
    for (const auto& [name, shape] : recorded_)
        n += shape_numel(shape);
    return n;
}

}  // namespace csmoe
