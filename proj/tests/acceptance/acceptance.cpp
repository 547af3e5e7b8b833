// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one line per criterion, "PASS"/"FAIL", measured runtime and the
// numbers the verdict was based on. Exit code 0 iff every criterion passes.
#include "csmoe/evalx.hpp"
#include "csmoe/losses.hpp"
#include "csmoe/model.hpp"
#include "csmoe/params.hpp"
#include "csmoe/rng.hpp"
#include "csmoe/sampler.hpp"
#include "csmoe/softmoe.hpp"
#include "csmoe/tnsr_io.hpp"
#include "csmoe/tokenizer.hpp"

#include "test_util.hpp"

#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

using namespace csmoe;
namespace fs = std::filesystem;
using csmoe::testing::clustered_stratum;
using csmoe::testing::mini_config;
using csmoe::testing::random_subset_mean_distance;
using csmoe::testing::random_tensor;
using csmoe::testing::scratch_dir;
using csmoe::testing::source_dir;

namespace {

struct Outcome
{
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
        }
    }
    void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string read_file(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

const fs::path kMiniConfig = source_dir() / "configs" / "mini.json";

/// Runs the CLI with stdout and stderr captured to files; returns the exit status.
int cli(const std::string& args, const fs::path& out, const fs::path& err)
{
    const std::string cmd = std::string("\"") + CSMOE_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---- 1 ---------------------------------------------------------------------

Outcome routing_simplex()
{
    Outcome o;
    double worst_row = 0.0, worst_col = 0.0;
    bool in_range = true;
    for (std::size_t s : {1u, 2u, 8u})
        for (std::size_t p : {1u, 4u, 49u, 196u}) {
            RandomInit init(derive_seed(1, {s, p}), 0.5);
            SoftMoEShape shape;
            shape.dim = 16;
            shape.hidden = 16;
            shape.slots = shape.experts = s;
            const SoftMoELayerParams layer = build_moe_layer(init, "moe", shape);
            const RoutingTensors r = route(random_tensor({p, 16}, derive_seed(2, {s, p}), -2, 2), layer);
            for (std::size_t i = 0; i < s; ++i) {
                double row = 0.0;
                for (std::size_t n = 0; n < p; ++n)
                    row += r.dispatch(i, n);
                worst_row = std::max(worst_row, std::abs(row - 1.0));
            }
            for (std::size_t n = 0; n < p; ++n) {
                double col = 0.0;
                for (std::size_t i = 0; i < s; ++i)
                    col += r.combine(i, n);
                worst_col = std::max(worst_col, std::abs(col - 1.0));
            }
            for (const Tensor* t : {&r.dispatch, &r.combine})
                for (double v : t->data())
                    in_range = in_range && v >= 0.0 && v <= 1.0;
        }
    o.require(worst_row <= 1e-9, "dispatch rows sum to 1 ± 1e-9");
    o.require(worst_col <= 1e-9, "combine columns sum to 1 ± 1e-9");
    o.require(in_range, "weights in [0,1]");
    o.note("max |row−1| " + fmt("%.2e", worst_row) + ", max |col−1| " + fmt("%.2e", worst_col));
    return o;
}

// ---- 2 ---------------------------------------------------------------------

Outcome expert_calls()
{
    Outcome o;
    for (std::size_t s : {2u, 8u}) {
        RandomInit init(3, 0.5);
        SoftMoEShape shape;
        shape.dim = 8;
        shape.hidden = 8;
        shape.slots = shape.experts = s;
        const SoftMoELayerParams layer = build_moe_layer(init, "moe", shape);
        for (std::size_t p : {16u, 49u, 196u}) {
            CounterScope scope;
            moe_forward(random_tensor({p, 8}, p), layer);
            const auto calls = scope.delta().expert_calls;
            o.require(calls == s, "S=" + std::to_string(s) + " P=" + std::to_string(p) + " gave " + std::to_string(calls));
        }
    }
    o.note("expert calls == S for P in {16,49,196}");
    return o;
}

// ---- 3 ---------------------------------------------------------------------

Outcome gradient_fidelity()
{
    Outcome o;
    const fs::path dir = scratch_dir("acc_grad");
    const int code = cli("--config \"" + kMiniConfig.string() + "\" grad-check --batch 2 --step 1e-5", dir / "out", dir / "err");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(dir / "out"));
    } catch (const std::exception&) {
        o.require(false, "grad-check output is JSON: " + read_file(dir / "err"));
        return o;
    }
    const double err = j.at("max_relative_error").get<double>();
    o.require(code == 0, "grad-check exit code 0 (got " + std::to_string(code) + ")");
    o.require(err <= 1e-4, "max relative error ≤ 1e-4");
    o.note("max rel err " + fmt("%.3e", err) + " over " + std::to_string(j.at("checked_elements").get<std::size_t>()) +
           " elements, h=1e-5");
    return o;
}

// ---- 4 ---------------------------------------------------------------------

Outcome loss_closed_forms()
{
    Outcome o;
    // ε → 0: log(1/P + 1e-300) rounds to log(1/P)
    double worst_ent = 0.0;
    for (std::size_t p : {4u, 49u, 196u}) {
        const double ent = loss_ent(Tensor::full({8, p}, 1.0 / static_cast<double>(p)), 1e-300).item();
        worst_ent = std::max(worst_ent, std::abs(ent - std::log(static_cast<double>(p)) / static_cast<double>(p)));
    }
    const double rep_same = loss_rep(Tensor::from({4, 2}, {0.6, 0.8, 0.6, 0.8, 0.6, 0.8, 0.6, 0.8})).item();
    std::vector<double> eye(8 * 8, 0.0);
    for (std::size_t i = 0; i < 8; ++i)
        eye[i * 8 + i] = 1.0;
    const double rep_orth = loss_rep(Tensor::from({8, 8}, eye)).item();
    const Tensor c = Tensor::from({2, 2}, {1, 0, 0, 1});
    const double mi = loss_mi(c, c, 0.5).item();
    o.require(worst_ent <= 1e-9, "L_ENT uniform = ln(P)/P ± 1e-9");
    o.require(std::abs(rep_same + 1.0) <= 1e-12, "L_REP identical = −1 ± 1e-12");
    o.require(std::abs(rep_orth + 1.0 / 8.0) <= 1e-12, "L_REP orthogonal = −1/S ± 1e-12");
    o.require(std::abs(mi + 2.0) <= 1e-9, "L_MI toy = −2 ± 1e-9");
    o.note("ENT err " + fmt("%.1e", worst_ent) + ", REP " + fmt("%.15g", rep_same) + " / " + fmt("%.15g", rep_orth) +
           ", MI " + fmt("%.15g", mi));
    return o;
}

// ---- 5 / 6 -----------------------------------------------------------------

Outcome cross_mask_wiring()
{
    Outcome o;
    const CsmoeConfig c = mini_config();
    const CsmoeModel m = random_model(c, 5, 0.3);
    const Tensor x = random_tensor({c.channels_x, c.image_side, c.image_side}, 1);
    const Tensor y = random_tensor({c.channels_y, c.image_side, c.image_side}, 2);
    const MaskPair mx = sample_masks(c.tokens(), c.mask_ratio, 10);
    const MaskPair my_a = sample_masks(c.tokens(), c.mask_ratio, 11);
    std::uint64_t seed_b = 12;
    while (sample_masks(c.tokens(), c.mask_ratio, seed_b).masked == my_a.masked)
        ++seed_b;
    const MaskPair my_b = sample_masks(c.tokens(), c.mask_ratio, seed_b);
    const ForwardArtifacts a = forward(m, x, y, mx, my_a);
    const ForwardArtifacts b = forward(m, x, y, mx, my_b);
    const double la = rec_loss(a.recon_y_from_x, a.target_y, a.mask_x.masked).item();
    const double lb = rec_loss(b.recon_y_from_x, b.target_y, b.mask_x.masked).item();
    o.require(a.recon_y_from_x.to_vector() == b.recon_y_from_x.to_vector(), "P̂(y←x) bit-unchanged");
    o.require(std::memcmp(&la, &lb, sizeof la) == 0, "rec_loss(P̂(y←x), y, M_x) bit-unchanged");
    o.require(a.recon_x_from_y.to_vector() != b.recon_x_from_y.to_vector(), "P̂(x←y) does depend on M_y");
    o.note("rec_loss " + fmt("%.17g", la));
    return o;
}

Outcome masked_input_independence()
{
    Outcome o;
    const CsmoeConfig c = mini_config();
    const CsmoeModel m = random_model(c, 6, 0.3);
    for (Modality mod : {Modality::x, Modality::y}) {
        const Tensor img = random_tensor({c.channels(mod), c.image_side, c.image_side}, 3);
        const MaskPair mask = sample_masks(c.tokens(), c.mask_ratio, 4);
        Tensor perturbed = img.detach();
        const std::size_t grid = c.grid(), rho = c.patch_size, side = c.image_side;
        auto d = perturbed.mutable_data();
        for (std::size_t n : mask.masked)
            for (std::size_t ch = 0; ch < c.channels(mod); ++ch)
                for (std::size_t yy = 0; yy < rho; ++yy)
                    for (std::size_t xx = 0; xx < rho; ++xx)
                        d[(ch * side + (n / grid) * rho + yy) * side + (n % grid) * rho + xx] += 123.0;
        o.require(encode(m, img, mask, mod).tokens.to_vector() == encode(m, perturbed, mask, mod).tokens.to_vector(),
                  std::string("encoder output bit-identical for modality ") + modality_name(mod));
    }
    o.note("masked patches perturbed by +123 in every band");
    return o;
}

// ---- 7 ---------------------------------------------------------------------

Outcome ga_sampling()
{
    Outcome o;
    using namespace sampler;
    o.require(mutation_rate(100, 5000) == 0.0008, "r_m(100, 5000) == 0.0008");

    Rng rng(7);
    std::size_t lo = SIZE_MAX, hi = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        Chromosome bits(100 + 1 + rng.index(1000));
        const double density = rng.uniform();
        for (auto& b : bits)
            b = rng.bernoulli(density);
        const std::size_t size = repair(bits, 100, rng.next_u64());
        lo = std::min(lo, size);
        hi = std::max(hi, size);
    }
    o.require(lo >= 90 && hi <= 110, "repair sizes within [90,110]");

    int wins = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto pts = clustered_stratum(derive_seed(seed, {0x636c}));
        GaConfig cfg;
        cfg.iterations = 500;
        cfg.population = 10;
        cfg.crossover_rate = 0.5;
        cfg.seed = seed;
        const StratumResult r = evolve_stratum(pts, cfg);
        const DistanceTable table(pts);
        wins += mean_pairwise_distance(table, r.selected) >
                random_subset_mean_distance(table, r.selected.size(), derive_seed(seed, {0x726e64}));
    }
    o.require(wins >= 9, "GA beats random in ≥ 9/10 seeds");

    const auto small = clustered_stratum(8);
    GaConfig cfg;
    const StratumResult whole = evolve_stratum(std::span(small).first(100), cfg);
    std::vector<std::size_t> expected(100);
    std::iota(expected.begin(), expected.end(), std::size_t{0});
    o.require(whole.retained_whole && whole.selected == expected, "n_g ≤ N_s retained unchanged");

    o.note("repair range [" + std::to_string(lo) + "," + std::to_string(hi) + "], GA wins " + std::to_string(wins) + "/10");
    return o;
}

// ---- 8 ---------------------------------------------------------------------

Outcome haversine_check()
{
    Outcome o;
    const double anti = sampler::haversine({0, 0}, {180, 0});
    const double same = sampler::haversine({37.5, -12.25}, {37.5, -12.25});
    o.require(std::abs(anti - 20015.09) <= 0.01, "antipodal = 20015.09 ± 0.01 km");
    o.require(same == 0.0, "coincident = 0");
    o.note("antipodal " + fmt("%.4f", anti) + " km");
    return o;
}

// ---- 9 ---------------------------------------------------------------------

Outcome compute_accounting()
{
    Outcome o;
    CsmoeConfig variant = mini_config();
    variant.image_side = 24;
    variant.slots = 3;
    variant.mask_ratio = 0.3;
    for (const CsmoeConfig& c : {mini_config(), variant}) {
        const ComputeProfile p = profile(c);
        const InstrumentedCount n = instrumented_count(c);
        o.require(p.flops == n.flops && p.params == n.params,
                  "analytic == instrumented (" + std::to_string(p.flops) + " vs " + std::to_string(n.flops) + ")");
    }
    std::vector<ComputeProfile> ps;
    for (std::size_t rho : {32u, 28u, 16u, 14u}) {
        CsmoeConfig c;
        c.patch_size = rho;
        ps.push_back(profile(c));
    }
    for (std::size_t i = 1; i < ps.size(); ++i) {
        o.require(ps[i].params <= ps[i - 1].params, "params non-increasing");
        o.require(ps[i].flops > ps[i - 1].flops, "FLOPs strictly increasing");
        o.require(ps[i].c2c < ps[i - 1].c2c, "C2C strictly decreasing");
    }
    const double c2c = c2c_ratio(277e6, 2.92e9);
    o.require(fmt("%.2f", c2c) == "94.86", "C2C(277M, 2.92B) = 94.86");
    const double ratio = static_cast<double>(ps[0].flops) / 2.92e9;
    std::string c2cs;
    for (const auto& p : ps)
        c2cs += (c2cs.empty() ? "" : " > ") + fmt("%.2f", p.c2c);
    o.note("C2C " + c2cs + "; ρ=32: " + fmt("%.2f", static_cast<double>(ps[0].params) / 1e6) + "M params, " +
           fmt("%.3f", static_cast<double>(ps[0].flops) / 1e9) + "B FLOPs (" + fmt("%.2f", ratio) +
           "× reference, soft target " + (ratio >= 0.5 && ratio <= 2.0 ? "met" : "missed") + ")");
    return o;
}

// ---- 10 --------------------------------------------------------------------

Outcome tokenizer_check()
{
    Outcome o;
    Rng rng(10);
    bool roundtrip = true;
    for (int t = 0; t < 200; ++t) {
        const std::size_t rho = 1 + rng.index(8), ch = 1 + rng.index(4);
        const std::size_t h = rho * (1 + rng.index(6)), w = rho * (1 + rng.index(6));
        const Tensor img = random_tensor({ch, h, w}, rng.next_u64());
        roundtrip = roundtrip && unpatchify(patchify(img, rho)).to_vector() == img.to_vector();
    }
    o.require(roundtrip, "patchify/unpatchify exact on 200 combinations");
    const TileSplit split = split_tile(Tensor::zeros({1, 1068, 1068}), 120);
    o.require(split.report.kept == 64, "1068-pixel tile yields 64 patches");
    bool partition = true;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t p = 1 + rng.index(400);
        const double ratio = rng.uniform(1e-3, 1.0 - 1e-3);
        const MaskPair m = sample_masks(p, ratio, rng.next_u64());
        std::vector<int> seen(p, 0);
        for (std::size_t i : m.masked)
            ++seen[i];
        for (std::size_t i : m.unmasked)
            ++seen[i];
        partition = partition && std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }) &&
                    m.masked.size() == static_cast<std::size_t>(std::floor(ratio * static_cast<double>(p) + 0.5));
    }
    o.require(partition, "mask partition on 10³ random (P, ratio, seed)");
    o.note("kept " + std::to_string(split.report.kept) + ", discarded_small " + std::to_string(split.report.discarded_small));
    return o;
}

// ---- 11 --------------------------------------------------------------------

Outcome retrieval_check()
{
    Outcome o;
    const std::vector<LabelSet> toy{LabelSet::of({0, 1}), LabelSet::of({0, 2})};
    o.require(retrieval_f1(LabelSet::of({0, 1}), toy, 2) == 0.75, "toy F1 == 0.75");

    Rng rng(11);
    auto random_set = [&] {
        LabelSet s;
        while (s.empty())
            for (std::size_t c = 0; c < 19; ++c)
                if (rng.bernoulli(0.25))
                    s.insert(c);
        return s;
    };
    std::vector<LabelSet> q, g;
    for (int i = 0; i < 25; ++i)
        q.push_back(random_set());
    for (int i = 0; i < 40; ++i)
        g.push_back(random_set());
    const Tensor qe = random_tensor({25, 6}, 1), ge = random_tensor({40, 6}, 2);
    std::vector<std::string> qid, gid;
    for (int i = 0; i < 25; ++i)
        qid.push_back("q" + std::to_string(i));
    for (int i = 0; i < 40; ++i)
        gid.push_back("g" + std::to_string(i));
    const auto ranking = retrieve(qe, qid, ge, gid, 10, false);
    const double base = mean_retrieval_f1(q, ranking, g, 10);
    bool perm_ok = true;
    for (int t = 0; t < 10; ++t) {
        std::vector<std::size_t> perm(19);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t j = 18; j > 0; --j)
            std::swap(perm[j], perm[rng.index(j + 1)]);
        auto relabel = [&](const std::vector<LabelSet>& sets) {
            std::vector<LabelSet> out;
            for (const auto& s : sets) {
                LabelSet r;
                for (std::size_t c : s.classes())
                    r.insert(perm[c]);
                out.push_back(r);
            }
            return out;
        };
        perm_ok = perm_ok && mean_retrieval_f1(relabel(q), ranking, relabel(g), 10) == base;
    }
    o.require(perm_ok, "F1 invariant under label relabeling");
    Tensor scaled = ge.detach();
    auto d = scaled.mutable_data();
    for (std::size_t r = 0; r < 40; ++r) {
        const double s = rng.uniform(0.01, 100.0);
        for (std::size_t k = 0; k < 6; ++k)
            d[r * 6 + k] *= s;
    }
    o.require(retrieve(scale(qe, 7.0), qid, scaled, gid, 10, false) == ranking, "ranking invariant under rescaling");
    o.note("mean F1 on random toy " + fmt("%.4f", base) + "%");
    return o;
}

// ---- 12 --------------------------------------------------------------------

Outcome smoke_training()
{
    Outcome o;
    const fs::path full = scratch_dir("acc_smoke_full"), part = scratch_dir("acc_smoke_part");
    const std::string base = "--config \"" + kMiniConfig.string() + "\" --seed 0 pretrain-toy --synthesize 8 --out ";
    const int c1 = cli(base + "\"" + full.string() + "\"", full / "stdout", full / "stderr");
    o.require(c1 == 0, "pretrain-toy exit 0 (" + read_file(full / "stderr") + ")");
    std::vector<double> totals;
    std::ifstream log(full / "loss.jsonl");
    for (std::string line; std::getline(log, line);)
        totals.push_back(nlohmann::json::parse(line).at("total").get<double>());
    o.require(totals.size() == 30, "30 logged steps (got " + std::to_string(totals.size()) + ")");
    if (totals.size() == 30)
        o.require(totals.back() < totals.front(), "total(step 30) < total(step 1)");

    const int c2 = cli(base + "\"" + part.string() + "\" --stop-after 15", part / "stdout", part / "stderr");
    const int c3 = cli("--config \"" + kMiniConfig.string() + "\" --seed 0 pretrain-toy --data \"" + (part / "data").string() +
                           "\" --out \"" + part.string() + "\" --resume \"" + (part / "checkpoint.ckpt").string() + "\"",
                       part / "stdout2", part / "stderr2");
    o.require(c2 == 0 && c3 == 0, "interrupted and resumed runs exit 0");
    o.require(read_file(part / "loss.jsonl") == read_file(full / "loss.jsonl"), "resumed loss log bit-identical");
    o.require(read_file(part / "checkpoint.ckpt") == read_file(full / "checkpoint.ckpt"), "resumed checkpoint bit-identical");
    if (totals.size() == 30)
        o.note("total " + fmt("%.4f", totals.front()) + " → " + fmt("%.4f", totals.back()));
    return o;
}

// ---- 13 --------------------------------------------------------------------

void write_fixtures(const fs::path& dir)
{
    using namespace sampler;
    ClassRaster climate;
    climate.lat_max = 60.0;
    climate.lon_min = -10.0;
    climate.dlat = 12.5;
    climate.dlon = 20.0;
    climate.rows = 2;
    climate.cols = 2;
    climate.codes = {1, 2, 3, 4};
    ClassRaster thematic = climate;
    thematic.rows = 1;
    thematic.cols = 1;
    thematic.dlat = 25.0;
    thematic.dlon = 40.0;
    thematic.codes = {10};
    save_grid(dir / "climate.grid", climate);
    save_grid(dir / "thematic.grid", thematic);
    std::ofstream csv(dir / "archive.csv");
    csv << "id,lon_min,lat_min,lon_max,lat_max\n";
    const auto pts = clustered_stratum(13);
    for (std::size_t i = 0; i < pts.size(); ++i)
        csv << "e" << i << "," << pts[i].lon - 0.01 << "," << pts[i].lat - 0.01 << "," << pts[i].lon + 0.01 << ","
            << pts[i].lat + 0.01 << "\n";

    fs::create_directories(dir / "tiles");
    Tensor tile = random_tensor({2, 250, 370}, 14);
    tile.mutable_data()[5 * 370 + 130] = std::nan("");
    save_tnsr(dir / "tiles" / "t0.tnsr", tile);

    const Tensor emb = random_tensor({12, 6}, 15);
    save_tnsr(dir / "emb.tnsr", emb);
    std::ofstream ids(dir / "emb.ids"), labels(dir / "labels.csv");
    labels << "id,labels\n";
    for (int i = 0; i < 12; ++i) {
        ids << "img" << i << "\n";
        labels << "img" << i << "," << (i % 3) << ";" << (3 + i % 2) << "\n";
    }
}

Outcome determinism()
{
    Outcome o;
    const fs::path fx = scratch_dir("acc_fixtures");
    write_fixtures(fx);
    const std::string cfg = "--config \"" + kMiniConfig.string() + "\" --seed 3 ";
    struct Command
    {
        std::string name;
        std::function<std::string(const fs::path&)> args;
        std::vector<std::string> files;
    };
    const std::vector<Command> commands{
        {"sample",
         [&](const fs::path& out) {
             return cfg + "--threads 2 sample --archive \"" + (fx / "archive.csv").string() + "\" --climate \"" +
                    (fx / "climate.grid").string() + "\" --thematic \"" + (fx / "thematic.grid").string() +
                    "\" --iters 60 --baseline --report \"" + (out / "report.json").string() + "\"";
         },
         {"report.json"}},
        {"split-tiles",
         [&](const fs::path& out) {
             return cfg + "split-tiles --input \"" + (fx / "tiles").string() + "\" --out \"" + (out / "p").string() + "\"";
         },
         {"p/t0_r0_c0.tnsr", "p/t0_r1_c2.tnsr", "p/t0.json"}},
        {"pretrain-toy",
         [&](const fs::path& out) {
             return cfg + "pretrain-toy --synthesize 6 --steps 4 --out \"" + (out / "run").string() + "\"";
         },
         {"run/loss.jsonl", "run/val.jsonl", "run/checkpoint.ckpt", "run/data/pair003_y.tnsr"}},
        {"grad-check", [&](const fs::path&) { return cfg + "grad-check --max-elements 300"; }, {}},
        {"eval-retrieval",
         [&](const fs::path&) {
             return cfg + "eval-retrieval --queries \"" + (fx / "emb.tnsr").string() + "\" --gallery \"" +
                    (fx / "emb.tnsr").string() + "\" --labels \"" + (fx / "labels.csv").string() +
                    "\" --task \"S1>S1\" --k 3";
         },
         {}},
        {"flops", [&](const fs::path&) { return cfg + "flops"; }, {}},
    };
    std::string ok;
    for (const auto& c : commands) {
        std::vector<std::string> runs[2];
        int codes[2];
        for (int r = 0; r < 2; ++r) {
            // Same output location both times so that paths echoed in the output agree.
            const fs::path out = scratch_dir("acc_det_" + c.name);
            codes[r] = cli(c.args(out), out / "stdout", out / "stderr");
            runs[r].push_back(read_file(out / "stdout"));
            runs[r].push_back(read_file(out / "stderr"));
            for (const auto& f : c.files)
                runs[r].push_back(read_file(out / f));
            for (std::size_t f = 0; f < c.files.size(); ++f)
                if (runs[r][2 + f].empty())
                    o.require(false, c.name + " wrote " + c.files[f]);
        }
        o.require(codes[0] == 0 && codes[1] == 0, c.name + " exit 0 (" + runs[0][1] + ")");
        o.require(runs[0] == runs[1], c.name + " byte-identical");
        if (runs[0] == runs[1])
            ok += (ok.empty() ? "" : ", ") + c.name;
    }
    o.note("reproducible: " + ok);
    return o;
}

struct Criterion
{
    int id;
    const char* name;
    double limit_s;  // 0 = no runtime limit
    std::function<Outcome()> run;
};

}  // namespace

int main()
{
    const std::vector<Criterion> criteria{
        {1, "routing simplex", 5, routing_simplex},
        {2, "expert-call economy", 1, expert_calls},
        {3, "gradient fidelity", 60, gradient_fidelity},
        {4, "loss closed forms", 0, loss_closed_forms},
        {5, "cross-mask wiring", 0, cross_mask_wiring},
        {6, "masked-input independence", 0, masked_input_independence},
        {7, "GA sampling", 180, ga_sampling},
        {8, "haversine", 0, haversine_check},
        {9, "compute accounting", 0, compute_accounting},
        {10, "tokenizer", 0, tokenizer_check},
        {11, "retrieval", 0, retrieval_check},
        {12, "smoke training", 120, smoke_training},
        {13, "end-to-end determinism", 0, determinism},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.limit_s > 0)
            o.require(secs < c.limit_s, "runtime < " + fmt("%.0f", c.limit_s) + " s");
        failures += !o.pass;
        std::printf("[%s] %2d %-26s %7.2f s  %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
