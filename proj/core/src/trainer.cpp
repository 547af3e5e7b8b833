// SPDX-License-Identifier: Apache-2.0
#include "csmoe/trainer.hpp"

#include "csmoe/errors.hpp"
#include "csmoe/rng.hpp"
#include "csmoe/tnsr_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <ostream>

namespace csmoe {

// ---- data -----------------------------------------------------------------

std::vector<PairedSample> load_paired_dir(const std::filesystem::path& dir, const CsmoeConfig& cfg)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir))
        throw DataError("data directory " + dir.string() + " does not exist");
    std::map<std::string, std::pair<fs::path, fs::path>> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".tnsr")
            continue;
        const std::string stem = entry.path().stem().string();
        if (stem.size() < 3)
            continue;
        const std::string suffix = stem.substr(stem.size() - 2);
        const std::string id = stem.substr(0, stem.size() - 2);
        if (suffix == "_x")
            found[id].first = entry.path();
        else if (suffix == "_y")
            found[id].second = entry.path();
    }
    std::string unpaired;
    for (const auto& [id, files] : found)
        if (files.first.empty() || files.second.empty())
            unpaired += (unpaired.empty() ? "" : ", ") + id + (files.first.empty() ? " (missing _x)" : " (missing _y)");
    if (!unpaired.empty())
        throw DataError("unpaired images in " + dir.string() + ": " + unpaired);
    if (found.empty())
        throw DataError("no <id>_x.tnsr/<id>_y.tnsr pairs in " + dir.string());

    const auto load = [&](const fs::path& p, Modality m) {
        Tensor t;
        try {
            t = load_tnsr(p);
        } catch (const FormatError& e) {
            throw DataError(e.what());
        }
        const Shape expected{cfg.channels(m), cfg.image_side, cfg.image_side};
        if (t.shape() != expected)
            throw DataError(p.string() + ": shape " + shape_str(t.shape()) + ", config expects " + shape_str(expected));
        return t;
    };
    std::vector<PairedSample> out;
    for (const auto& [id, files] : found)
        out.push_back({id, load(files.first, Modality::x), load(files.second, Modality::y)});
    return out;
}

PairedSample synthetic_pair(const CsmoeConfig& cfg, std::uint64_t seed, const std::string& id)
{
    Rng rng(seed);
    const std::size_t side = cfg.image_side;
    constexpr int kWaves = 3;
    double fr[kWaves], fc[kWaves], phase[kWaves], amp[kWaves];
    for (int k = 0; k < kWaves; ++k) {
        fr[k] = rng.uniform(0.5, 2.5);
        fc[k] = rng.uniform(0.5, 2.5);
        phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        amp[k] = rng.uniform(0.3, 1.0);
    }
    std::vector<double> field(side * side);
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
            double v = 0.0;
            for (int k = 0; k < kWaves; ++k)
                v += amp[k] * std::sin(2.0 * std::numbers::pi * (fr[k] * static_cast<double>(r) + fc[k] * static_cast<double>(c)) /
                                           static_cast<double>(side) +
                                       phase[k]);
            field[r * side + c] = v;
        }
    const auto make = [&](std::size_t channels, bool squared) {
        std::vector<double> out(channels * side * side);
        for (std::size_t ch = 0; ch < channels; ++ch) {
            const double gain = rng.uniform(0.5, 1.5);
            const double offset = rng.uniform(-0.5, 0.5);
            for (std::size_t i = 0; i < side * side; ++i) {
                const double base = squared && ch % 2 == 1 ? field[i] * field[i] - 0.5 : field[i];
                out[ch * side * side + i] = gain * base + offset + 0.05 * rng.normal();
            }
        }
        return Tensor::from({channels, side, side}, std::move(out));
    };
    PairedSample s;
    s.id = id;
    s.x = make(cfg.channels_x, true);
    s.y = make(cfg.channels_y, false);
    return s;
}

void synthesize_pairs(const std::filesystem::path& dir, std::size_t count, const CsmoeConfig& cfg, std::uint64_t seed)
{
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < count; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "pair%03zu", i);
        const PairedSample s = synthetic_pair(cfg, derive_seed(seed, {0x73796e74ULL, i}), id);
        save_tnsr(dir / (s.id + "_x.tnsr"), s.x);
        save_tnsr(dir / (s.id + "_y.tnsr"), s.y);
    }
}

// ---- configuration --------------------------------------------------------

void TrainerConfig::validate() const
{
    if (batch < 2)
        throw ConfigError("trainer config: batch must be at least 2 (the MI term needs two pairs)");
    if (!(lr > 0.0))
        throw ConfigError("trainer config: lr must be positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
        throw ConfigError("trainer config: warmup_fraction must lie in [0, 1)");
    if (!(val_fraction >= 0.0 && val_fraction < 0.5))
        throw ConfigError("trainer config: val_fraction must lie in [0, 0.5)");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0) || weight_decay < 0.0)
        throw ConfigError("trainer config: invalid AdamW hyperparameters");
}

nlohmann::json trainer_config_to_json(const TrainerConfig& c)
{
    return {{"epochs", c.epochs},        {"steps", c.steps}, {"batch", c.batch},
            {"lr", c.lr},                {"weight_decay", c.weight_decay},
            {"warmup_fraction", c.warmup_fraction},
            {"beta1", c.beta1},          {"beta2", c.beta2}, {"adam_eps", c.adam_eps},
            {"val_fraction", c.val_fraction}};
}

TrainerConfig trainer_config_from_json(const nlohmann::json& j)
{
    if (!j.is_object())
        throw ConfigError("trainer config must be a JSON object");
    TrainerConfig c;
    const auto defaults = trainer_config_to_json(c);
    for (const auto& [key, value] : j.items())
        if (!defaults.contains(key))
            throw ConfigError("trainer config: unknown key \"" + key + "\"");
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.steps = j.value("steps", c.steps);
        c.batch = j.value("batch", c.batch);
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.val_fraction = j.value("val_fraction", c.val_fraction);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("trainer config: ") + e.what());
    }
    return c;
}

DataSplit split_validation(std::size_t n, double fraction, std::uint64_t seed)
{
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = i;
    std::size_t held = 0;
    if (n >= 4 && fraction > 0.0)
        held = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
    Rng rng(derive_seed(seed, {0x76616cULL}));
    for (std::size_t i = 0; i < held; ++i)
        std::swap(order[i], order[i + rng.index(n - i)]);
    DataSplit s;
    s.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
    s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

// ---- trainer --------------------------------------------------------------

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566ULL;
constexpr std::uint64_t kMaskStream = 0x6d61736bULL;
constexpr std::uint64_t kValStream = 0x76616c6dULL;

}  // namespace

Trainer::Trainer(const CsmoeConfig& model_cfg, const TrainerConfig& cfg, const LossWeights& weights,
                 std::vector<PairedSample> data, std::uint64_t seed)
    : model_cfg_(model_cfg), cfg_(cfg), weights_(weights), data_(std::move(data)), seed_(seed)
{
    cfg_.validate();
    model_cfg_.validate();
    split_ = split_validation(data_.size(), cfg_.val_fraction, seed_);
    if (split_.train.size() < 2)
        throw DataError("pretraining needs at least two training pairs, have " + std::to_string(split_.train.size()));
    batch_ = std::min(cfg_.batch, split_.train.size());
    steps_per_epoch_ = split_.train.size() / batch_;
    total_steps_ = cfg_.steps > 0 ? cfg_.steps : cfg_.epochs * steps_per_epoch_;
    warmup_ = static_cast<std::size_t>(std::floor(cfg_.warmup_fraction * static_cast<double>(total_steps_)));
    model_ = init_model(model_cfg_);
    opt_ = std::make_unique<AdamW>(model_.parameters, AdamWConfig{cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay});
}

std::vector<std::size_t> Trainer::batch_indices(std::size_t step) const
{
    const std::size_t epoch = step / steps_per_epoch_;
    const std::size_t pos = step % steps_per_epoch_;
    std::vector<std::size_t> order = split_.train;
    Rng rng(derive_seed(seed_, {kShuffleStream, epoch}));
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.index(i)]);
    return {order.begin() + static_cast<std::ptrdiff_t>(pos * batch_),
            order.begin() + static_cast<std::ptrdiff_t>((pos + 1) * batch_)};
}

LossBreakdown Trainer::train_step()
{
    if (step_ >= total_steps_)
        throw ParameterError("trainer: all " + std::to_string(total_steps_) + " steps already done");
    std::vector<ForwardArtifacts> batch;
    for (std::size_t i : batch_indices(step_))
        batch.push_back(forward(model_, data_[i].x, data_[i].y, derive_seed(seed_, {kMaskStream, step_, i})));
    LossBreakdown loss = loss_total(model_, batch, weights_);
    if (!std::isfinite(loss.total))
        throw EvaluationError("trainer: non-finite loss at step " + std::to_string(step_ + 1));
    opt_->zero_grad();
    loss.total_tensor.backward();
    ++step_;
    opt_->step(cosine_warmup_lr(cfg_.lr, step_, total_steps_, warmup_));
    return loss;
}

std::optional<LossBreakdown> Trainer::validation_loss() const
{
    if (split_.validation.size() < 2)
        return std::nullopt;
    std::vector<ForwardArtifacts> batch;
    for (std::size_t i : split_.validation)
        batch.push_back(forward(model_, data_[i].x.detach(), data_[i].y.detach(), derive_seed(seed_, {kValStream, i})));
    return loss_total(model_, batch, weights_);
}

void Trainer::run(std::size_t stop_after, std::ostream* log, std::ostream* val_log)
{
    const std::size_t end = stop_after > 0 ? std::min(stop_after, total_steps_) : total_steps_;
    while (step_ < end) {
        const LossBreakdown loss = train_step();
        if (log)
            *log << loss_log_line(step_, loss) << '\n';
        const bool epoch_end = step_ % steps_per_epoch_ == 0 || step_ == total_steps_;
        if (val_log && epoch_end)
            if (const auto val = validation_loss()) {
                nlohmann::ordered_json j;
                j["step"] = step_;
                j["epoch"] = (step_ + steps_per_epoch_ - 1) / steps_per_epoch_;
                j["val_total"] = val->total;
                *val_log << j.dump() << '\n';
            }
    }
}

void Trainer::save(const std::filesystem::path& checkpoint) const
{
    CheckpointExtras extras;
    extras.meta = {{"step", step_},
                   {"seed", seed_},
                   {"total_steps", total_steps_},
                   {"pairs", data_.size()},
                   {"trainer", trainer_config_to_json(cfg_)}};
    extras.tensors = opt_->state();
    save_checkpoint(model_, checkpoint, &extras);
}

void Trainer::restore(const std::filesystem::path& checkpoint)
{
    CheckpointExtras extras;
    CsmoeModel loaded = load_checkpoint(checkpoint, &extras);
    const auto& meta = extras.meta;
    try {
        if (config_to_json(loaded.config) != config_to_json(model_cfg_))
            throw FormatError("model configuration differs from the current run");
        if (meta.at("seed").get<std::uint64_t>() != seed_ || meta.at("total_steps").get<std::size_t>() != total_steps_ ||
            meta.at("pairs").get<std::size_t>() != data_.size())
            throw FormatError("seed, step budget or dataset size differs from the current run");
        step_ = meta.at("step").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(checkpoint.string() + ": missing trainer state (" + e.what() + ")");
    } catch (const FormatError& e) {
        throw FormatError(checkpoint.string() + ": cannot resume: " + e.what());
    }
    model_ = std::move(loaded);
    opt_ = std::make_unique<AdamW>(model_.parameters, AdamWConfig{cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay});
    opt_->load_state(extras.tensors, step_);
}

std::string loss_log_line(std::size_t step, const LossBreakdown& loss)
{
    nlohmann::ordered_json j;
    j["step"] = step;
    j["umr"] = loss.umr;
    j["cmr"] = loss.cmr;
    j["mi"] = loss.mi;
    j["rep"] = loss.rep;
    j["ent"] = loss.ent;
    j["total"] = loss.total;
    return j.dump();
}

}  // namespace csmoe
