// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csmoe/gradcheck.hpp"
#include "csmoe/rng.hpp"
#include "csmoe/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace csmoe {

enum class Init
{
    normal,  // truncated normal(0, 0.02)
    zeros,
    ones,
};

/// Source of parameter tensors during model construction. Builders call make()
/// once per trainable tensor in a fixed order, so the same construction code
/// serves random initialization, checkpoint loading and shape-only accounting.
class ParamFactory
{
public:
    virtual ~ParamFactory() = default;
    virtual Tensor make(const std::string& name, const Shape& shape, Init init) = 0;
};

/// Seeded initialization; keeps the created parameters in creation order.
class RandomInit final : public ParamFactory
{
public:
    explicit RandomInit(std::uint64_t seed, double stddev = 0.02) : rng_(seed), stddev_(stddev) {}

    Tensor make(const std::string& name, const Shape& shape, Init init) override;

    const std::vector<NamedTensor>& created() const noexcept { return created_; }

private:
    Rng rng_;
    double stddev_;
    std::vector<NamedTensor> created_;
};

/// Every tensor random: normal-init tensors and zero-init tensors drawn from
/// truncated normal(0, stddev), unit-init tensors from 1 + truncated normal(0, stddev).
/// Gives a generic parameter point for gradient checks, away from the symmetric
/// zero/one initial values.
class FullyRandomInit final : public ParamFactory
{
public:
    explicit FullyRandomInit(std::uint64_t seed, double stddev) : rng_(seed), stddev_(stddev) {}

    Tensor make(const std::string& name, const Shape& shape, Init init) override;

private:
    Rng rng_;
    double stddev_;
};

/// Records names and shapes without allocating parameter storage.
class ShapeRecorder final : public ParamFactory
{
public:
    Tensor make(const std::string& name, const Shape& shape, Init init) override;

    const std::vector<std::pair<std::string, Shape>>& recorded() const noexcept { return recorded_; }
    std::size_t total_elements() const noexcept;

private:
    std::vector<std::pair<std::string, Shape>> recorded_;
};

}  // namespace csmoe
