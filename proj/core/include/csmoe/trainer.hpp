// SPDX-License-Identifier: Apache-2.0
//
// Paired-image data, synthetic pairs and the pretraining loop (AdamW, linear
// warm-up then cosine decay). Every random choice is derived from the run seed and
// the global step, so a run resumed from a checkpoint continues bit-identically.
#pragma once

#include "csmoe/losses.hpp"
#include "csmoe/model.hpp"
#include "csmoe/optim.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace csmoe {

struct PairedSample
{
    std::string id;
    Tensor x;  // [C_x × H × W]
    Tensor y;  // [C_y × H × W]
};

/// Loads `<id>_x.tnsr` / `<id>_y.tnsr` pairs sorted by id. Unpaired files raise a
/// DataError listing the ids; shapes that disagree with `cfg` raise a DataError
/// naming the file.
std::vector<PairedSample> load_paired_dir(const std::filesystem::path& dir, const CsmoeConfig& cfg);

/// Smooth random fields with a shared latent pattern across the two modalities.
PairedSample synthetic_pair(const CsmoeConfig& cfg, std::uint64_t seed, const std::string& id);
/// Writes `count` synthetic pairs named pair000, pair001, ... into `dir`.
void synthesize_pairs(const std::filesystem::path& dir, std::size_t count, const CsmoeConfig& cfg, std::uint64_t seed);

struct TrainerConfig
{
    std::size_t epochs = 150;
    /// Total optimizer steps; 0 derives it from epochs × steps per epoch.
    std::size_t steps = 0;
    std::size_t batch = 256;
    double lr = 1e-4;
    double weight_decay = 0.05;
    double warmup_fraction = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double val_fraction = 0.05;

    void validate() const;
};

nlohmann::json trainer_config_to_json(const TrainerConfig& c);
TrainerConfig trainer_config_from_json(const nlohmann::json& j);

/// Held-out validation indices: max(2, ceil(fraction·n)) pairs when n ≥ 4, none otherwise.
struct DataSplit
{
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};
DataSplit split_validation(std::size_t n, double fraction, std::uint64_t seed);

class Trainer
{
public:
    Trainer(const CsmoeConfig& model_cfg, const TrainerConfig& cfg, const LossWeights& weights, std::vector<PairedSample> data,
            std::uint64_t seed);

    /// Loads model weights, optimizer moments and the step counter from a checkpoint
    /// written by save(). FormatError if the checkpoint belongs to a different run layout.
    void restore(const std::filesystem::path& checkpoint);
    void save(const std::filesystem::path& checkpoint) const;

    std::size_t step() const noexcept { return step_; }
    std::size_t total_steps() const noexcept { return total_steps_; }
    std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
    std::size_t warmup_steps() const noexcept { return warmup_; }
    const DataSplit& split() const noexcept { return split_; }
    const CsmoeModel& model() const noexcept { return model_; }

    /// Runs step() + 1 and returns its loss (evaluated before the update).
    LossBreakdown train_step();
    /// Loss on the held-out pairs with fixed masks; nullopt without a validation split.
    std::optional<LossBreakdown> validation_loss() const;

    /// Trains until total_steps() or until step() reaches `stop_after` (0 = no limit).
    /// Step losses go to `log` as JSON lines; validation losses after each epoch to `val_log`.
    void run(std::size_t stop_after, std::ostream* log, std::ostream* val_log);

private:
    std::vector<std::size_t> batch_indices(std::size_t step) const;

    CsmoeConfig model_cfg_;
    TrainerConfig cfg_;
    LossWeights weights_;
    std::vector<PairedSample> data_;
    std::uint64_t seed_;
    DataSplit split_;
    std::size_t batch_ = 0;
    std::size_t steps_per_epoch_ = 0;
    std::size_t total_steps_ = 0;
    std::size_t warmup_ = 0;
    CsmoeModel model_;
    std::unique_ptr<AdamW> opt_;
    std::size_t step_ = 0;
};

/// `{"step":n,"umr":..,"cmr":..,"mi":..,"rep":..,"ent":..,"total":..}`
std::string loss_log_line(std::size_t step, const LossBreakdown& loss);

}  // namespace csmoe
