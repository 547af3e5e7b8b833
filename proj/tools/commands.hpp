// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "csmoe/run_config.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

namespace csmoe::cli {

/// Bad or inconsistent flags; mapped to exit code 1.
struct UsageError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

struct GlobalOptions
{
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    std::string config_path;
};

struct SampleOptions
{
    std::string archive, climate, thematic;
    std::optional<std::size_t> target, iterations, population, stagnation;
    std::optional<double> crossover_rate;
    bool baseline = false;
    std::string out;
    std::string report;
};

struct SplitTilesOptions
{
    std::string input;
    std::string out;
    std::size_t patch = 120;
    double sentinel = std::numeric_limits<double>::quiet_NaN();
};

struct PretrainOptions
{
    std::string data;
    std::size_t synthesize = 0;
    std::string out;
    std::optional<std::size_t> steps, epochs, batch;
    std::optional<double> lr;
    std::size_t stop_after = 0;
    std::string resume;
};

struct GradCheckFlags
{
    std::size_t batch = 2;
    double step = 1e-5;
    double tolerance = 1e-4;
    std::size_t max_elements = 10000;
    double init_scale = 0.3;
};

struct EvalRetrievalOptions
{
    std::string checkpoint, queries, gallery, labels, task;
    std::optional<std::size_t> k;
    std::string strategy;
    std::string out;
};

struct FlopsOptions
{
    bool verify = false;
    std::string out;
};

/// Each command returns the process exit code; library errors propagate as exceptions.
int run_sample(const RunConfig& cfg, const GlobalOptions& g, const SampleOptions& o);
int run_split_tiles(const RunConfig& cfg, const GlobalOptions& g, const SplitTilesOptions& o);
int run_pretrain(const RunConfig& cfg, const GlobalOptions& g, const PretrainOptions& o);
int run_grad_check(const RunConfig& cfg, const GlobalOptions& g, const GradCheckFlags& o);
int run_eval_retrieval(const RunConfig& cfg, const GlobalOptions& g, const EvalRetrievalOptions& o);
int run_flops(const RunConfig& cfg, const GlobalOptions& g, const FlopsOptions& o);

}  // namespace csmoe::cli
