// SPDX-License-Identifier: Apache-2.0
//
// Complete run configuration as one JSON document:
//   {"seed", "model": {...}, "ga": {...}, "loss": {...}, "trainer": {...},
//    "probe": {...}, "eval": {...}, "paths": {...}}
// Missing fields keep their defaults, unknown keys are rejected. The top-level
// seed is copied into every nested seed when the config is resolved. A document whose
// keys are all model fields is read as the model section alone.
#pragma once

#include "csmoe/evalx.hpp"
#include "csmoe/losses.hpp"
#include "csmoe/model.hpp"
#include "csmoe/sampler.hpp"
#include "csmoe/trainer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace csmoe {

struct EvalConfig
{
    std::size_t k = 10;
    EmbeddingStrategy strategy = EmbeddingStrategy::only_cls;
};

struct PathConfig
{
    std::string data_dir;
    std::string out_dir;
};

struct RunConfig
{
    std::uint64_t seed = 0;
    CsmoeConfig model;
    sampler::GaConfig ga;
    LossWeights loss;
    TrainerConfig trainer;
    ProbeConfig probe;
    EvalConfig eval;
    PathConfig paths;

    /// Copies `seed` into the nested configs and validates every section.
    void resolve();
};

nlohmann::json loss_weights_to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j);

nlohmann::json run_config_to_json(const RunConfig& cfg);
/// ConfigError on unknown keys or wrongly typed values.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Parses a file; the error message names the file.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace csmoe
