// SPDX-License-Identifier: Apache-2.0
#include "csmoe/losses.hpp"
#include "csmoe/model.hpp"
#include "csmoe/params.hpp"
#include "csmoe/rng.hpp"
#include "csmoe/softmoe.hpp"
#include "csmoe/trainer.hpp"

#include <benchmark/benchmark.h>

using namespace csmoe;

namespace {

void BM_MoeForward(benchmark::State& state)
{
    const auto p = static_cast<std::size_t>(state.range(0));
    RandomInit init(1, 0.1);
    SoftMoEShape shape;
    shape.dim = 64;
    shape.hidden = 64;
    shape.slots = shape.experts = 8;
    const SoftMoELayerParams layer = build_moe_layer(init, "moe", shape);
    Rng rng(2);
    std::vector<double> v(p * 64);
    for (auto& x : v)
        x = rng.uniform(-1.0, 1.0);
    const Tensor z = Tensor::from({p, 64}, v);
    for (auto _ : state)
        benchmark::DoNotOptimize(moe_forward(z, layer));
}
BENCHMARK(BM_MoeForward)->Arg(16)->Arg(49)->Arg(196);

CsmoeConfig small_config()
{
    CsmoeConfig c;
    c.image_side = 32;
    c.patch_size = 8;
    c.channels_x = 2;
    c.channels_y = 4;
    c.d_enc = 32;
    c.d_dec = 16;
    c.enc_ms_layers = 2;
    c.enc_cs_layers = 1;
    c.dec_layers = 1;
    c.slots = c.experts = 4;
    c.heads = 4;
    c.dec_heads = 2;
    c.expert_hidden = 32;
    c.dec_mlp_hidden = 32;
    c.d_proj = 16;
    return c;
}

void BM_TrainingStepLoss(benchmark::State& state)
{
    const CsmoeConfig c = small_config();
    const CsmoeModel m = init_model(c);
    const PairedSample a = synthetic_pair(c, 1, "a"), b = synthetic_pair(c, 2, "b");
    std::uint64_t seed = 0;
    for (auto _ : state) {
        const std::vector<ForwardArtifacts> batch{forward(m, a.x, a.y, ++seed), forward(m, b.x, b.y, ++seed)};
        const LossBreakdown l = loss_total(m, batch, LossWeights{});
        l.total_tensor.backward();
        for (auto& [name, p] : m.parameters) {
            Tensor t = p;
            t.zero_grad();
        }
    }
}
BENCHMARK(BM_TrainingStepLoss)->Unit(benchmark::kMillisecond);

}  // namespace
