// SPDX-License-Identifier: Apache-2.0
#include "csmoe/errors.hpp"
#include "csmoe/optim.hpp"
#include "csmoe/run_config.hpp"
#include "csmoe/tnsr_io.hpp"
#include "csmoe/trainer.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

using namespace csmoe;
using csmoe::testing::mini_config;
using csmoe::testing::scratch_dir;
using csmoe::testing::source_dir;

TEST(AdamWTest, FirstStepHandComputed)
{
    Tensor w = Tensor::parameter({1, 2}, {1.0, -2.0});
    Tensor b = Tensor::parameter({2}, {0.5, 0.5});
    AdamW opt({{"w", w}, {"b", b}}, AdamWConfig{0.9, 0.999, 1e-8, 0.1});
    sum(add_row(mul(w, w), b)).backward();  // grad w = 2w, grad b = 1
    opt.step(0.01);
    // bias-corrected first step: update = g/(|g| + eps) ≈ sign(g)
    const double u = 1.0 / (1.0 + 1e-8);
    EXPECT_NEAR(w.data()[0], 1.0 - 0.01 * (2.0 / (2.0 + 1e-8) + 0.1 * 1.0), 1e-15);
    EXPECT_NEAR(w.data()[1], -2.0 - 0.01 * (-4.0 / (4.0 + 1e-8) + 0.1 * -2.0), 1e-15);
    EXPECT_NEAR(b.data()[0], 0.5 - 0.01 * u, 1e-15);  // no decay on rank-1 tensors
    EXPECT_EQ(opt.steps(), 1u);
}

TEST(AdamWTest, StateRoundTrip)
{
    Tensor w = Tensor::parameter({2, 2}, {1, 2, 3, 4});
    AdamW opt({{"w", w}}, {});
    sum(square(w)).backward();
    opt.step(0.1);
    const auto state = opt.state();
    ASSERT_EQ(state.size(), 2u);
    EXPECT_EQ(state[0].first, "adam.m.w");
    Tensor w2 = Tensor::parameter({2, 2}, {1, 2, 3, 4});
    AdamW opt2({{"w", w2}}, {});
    opt2.load_state(state, 1);
    EXPECT_EQ(opt2.state()[1].second.to_vector(), state[1].second.to_vector());
    EXPECT_THROW(opt2.load_state({state[0]}, 1), FormatError);
}

TEST(Schedule, WarmupThenCosine)
{
    EXPECT_DOUBLE_EQ(cosine_warmup_lr(1.0, 1, 100, 5), 0.2);
    EXPECT_DOUBLE_EQ(cosine_warmup_lr(1.0, 5, 100, 5), 1.0);
    EXPECT_NEAR(cosine_warmup_lr(1.0, 100, 100, 5), 0.0, 1e-15);
    EXPECT_NEAR(cosine_warmup_lr(2.0, 52, 100, 5), 1.0 + std::cos(std::numbers::pi * 47.0 / 95.0), 1e-12);
    EXPECT_DOUBLE_EQ(cosine_warmup_lr(1.0, 1, 10, 0), 0.5 * (1.0 + std::cos(std::numbers::pi * 0.1)));
}

TEST(Split, ValidationSizes)
{
    EXPECT_TRUE(split_validation(3, 0.05, 0).validation.empty());
    EXPECT_EQ(split_validation(8, 0.05, 0).validation.size(), 2u);
    EXPECT_EQ(split_validation(100, 0.05, 0).validation.size(), 5u);
    EXPECT_EQ(split_validation(101, 0.05, 0).validation.size(), 6u);
    const DataSplit s = split_validation(50, 0.1, 3);
    std::set<std::size_t> all(s.train.begin(), s.train.end());
    all.insert(s.validation.begin(), s.validation.end());
    EXPECT_EQ(all.size(), 50u);
    EXPECT_EQ(s.train.size() + s.validation.size(), 50u);
}

TEST(PairedData, SynthesizeAndLoad)
{
    const CsmoeConfig c = mini_config();
    const auto dir = scratch_dir("pairs");
    synthesize_pairs(dir, 3, c, 4);
    const auto pairs = load_paired_dir(dir, c);
    ASSERT_EQ(pairs.size(), 3u);
    EXPECT_EQ(pairs[0].id, "pair000");
    EXPECT_EQ(pairs[2].y.shape(), (Shape{c.channels_y, c.image_side, c.image_side}));
    EXPECT_NE(pairs[1].x.to_vector(), pairs[2].x.to_vector());
    const auto again = scratch_dir("pairs_again");
    synthesize_pairs(again, 3, c, 4);
    EXPECT_EQ(load_paired_dir(again, c)[1].y.to_vector(), pairs[1].y.to_vector());

    std::filesystem::remove(dir / "pair001_y.tnsr");
    try {
        load_paired_dir(dir, c);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("pair001"), std::string::npos) << e.what();
    }
    save_tnsr(dir / "pair001_y.tnsr", Tensor::zeros({1, 16, 16}));
    try {
        load_paired_dir(dir, c);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("pair001_y.tnsr"), std::string::npos) << e.what();
    }
}

namespace {

TrainerConfig small_trainer(std::size_t steps)
{
    TrainerConfig t;
    t.steps = steps;
    t.batch = 3;
    t.lr = 1e-2;
    return t;
}

std::vector<PairedSample> pairs(const CsmoeConfig& c, std::size_t n)
{
    std::vector<PairedSample> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(synthetic_pair(c, i, "p" + std::to_string(i)));
    return out;
}

}  // namespace

TEST(TrainerTest, ZeroStepsKeepsInitialization)
{
    const CsmoeConfig c = mini_config();
    Trainer t(c, small_trainer(4), {}, pairs(c, 8), 0);
    const CsmoeModel init = init_model(c);
    for (std::size_t i = 0; i < init.parameters.size(); ++i)
        EXPECT_EQ(t.model().parameters[i].second.to_vector(), init.parameters[i].second.to_vector());
    EXPECT_EQ(t.split().validation.size(), 2u);
    EXPECT_EQ(t.steps_per_epoch(), 2u);
}

TEST(TrainerTest, ResumeIsBitExact)
{
    const CsmoeConfig c = mini_config();
    const auto dir = scratch_dir("resume");
    std::ostringstream full_log, part_log;
    Trainer full(c, small_trainer(6), {}, pairs(c, 8), 1);
    full.run(0, &full_log, nullptr);

    Trainer first(c, small_trainer(6), {}, pairs(c, 8), 1);
    first.run(3, &part_log, nullptr);
    EXPECT_EQ(first.step(), 3u);
    first.save(dir / "mid.ckpt");
    Trainer second(c, small_trainer(6), {}, pairs(c, 8), 1);
    second.restore(dir / "mid.ckpt");
    second.run(0, &part_log, nullptr);

    EXPECT_EQ(part_log.str(), full_log.str());
    for (std::size_t i = 0; i < full.model().parameters.size(); ++i)
        ASSERT_EQ(second.model().parameters[i].second.to_vector(), full.model().parameters[i].second.to_vector());

    Trainer other(c, small_trainer(7), {}, pairs(c, 8), 1);
    EXPECT_THROW(other.restore(dir / "mid.ckpt"), FormatError);
}

TEST(TrainerTest, LogLineFormat)
{
    LossBreakdown l;
    l.umr = 1;
    l.cmr = 2;
    l.mi = 3;
    l.rep = -0.5;
    l.ent = 0.25;
    l.total = 5.75;
    const auto j = nlohmann::ordered_json::parse(loss_log_line(3, l));
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items())
        keys.push_back(k);
    EXPECT_EQ(keys, (std::vector<std::string>{"step", "umr", "cmr", "mi", "rep", "ent", "total"}));
    EXPECT_EQ(j.at("rep"), -0.5);
}

TEST(RunConfigTest, DefaultsRoundTripAndUnknownKeys)
{
    const RunConfig def;
    const auto j = run_config_to_json(def);
    EXPECT_EQ(run_config_to_json(run_config_from_json(j)), j);
    EXPECT_THROW(run_config_from_json({{"trainer", {{"epoch", 3}}}}), ConfigError);
    EXPECT_THROW(run_config_from_json({{"sampler", {}}}), ConfigError);
    EXPECT_THROW(run_config_from_json({{"eval", {{"strategy", "mean"}}}}), ConfigError);
    EXPECT_THROW(run_config_from_json({{"loss", {{"lambda", "big"}}}}), ConfigError);
}

TEST(RunConfigTest, SeedPropagatesOnResolve)
{
    RunConfig c = run_config_from_json({{"seed", 42}, {"model", {{"seed", 3}}}});
    c.resolve();
    EXPECT_EQ(c.model.seed, 42u);
    EXPECT_EQ(c.ga.seed, 42u);
    EXPECT_EQ(c.probe.seed, 42u);
}

TEST(RunConfigTest, BareModelDocument)
{
    const RunConfig c = run_config_from_json({{"patch_size", 8}, {"image_side", 16}});
    EXPECT_EQ(c.model.patch_size, 8u);
    EXPECT_EQ(c.model.image_side, 16u);
}

TEST(RunConfigTest, ShippedMiniConfig)
{
    RunConfig c = load_run_config(source_dir() / "configs" / "mini.json");
    c.resolve();
    EXPECT_EQ(config_to_json(c.model), config_to_json(mini_config()));
    EXPECT_THROW(load_run_config(source_dir() / "configs" / "missing.json"), ConfigError);
}

TEST(RunConfigTest, ResolveValidates)
{
    RunConfig c;
    c.loss.eps = 0.0;
    EXPECT_THROW(c.resolve(), ConfigError);
    c = RunConfig{};
    c.trainer.batch = 1;
    EXPECT_THROW(c.resolve(), ConfigError);
}
