// SPDX-License-Identifier: Apache-2.0
#include "csmoe/evalx.hpp"

#include "csmoe/errors.hpp"
#include "csmoe/optim.hpp"
#include "csmoe/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace csmoe {

// ---- labels ---------------------------------------------------------------

LabelSet LabelSet::of(std::initializer_list<std::size_t> classes)
{
    LabelSet s;
    for (std::size_t c : classes)
        s.insert(c);
    return s;
}

LabelSet LabelSet::of(std::span<const std::size_t> classes)
{
    LabelSet s;
    for (std::size_t c : classes)
        s.insert(c);
    return s;
}

void LabelSet::insert(std::size_t c)
{
    if (c / 64 >= words_.size())
        words_.resize(c / 64 + 1, 0);
    words_[c / 64] |= std::uint64_t{1} << (c % 64);
}

bool LabelSet::contains(std::size_t c) const noexcept
{
    return c / 64 < words_.size() && (words_[c / 64] >> (c % 64) & 1U);
}

std::size_t LabelSet::size() const noexcept
{
    std::size_t n = 0;
    for (std::uint64_t w : words_)
        n += static_cast<std::size_t>(std::popcount(w));
    return n;
}

std::size_t LabelSet::intersection_size(const LabelSet& other) const noexcept
{
    std::size_t n = 0;
    for (std::size_t i = 0; i < std::min(words_.size(), other.words_.size()); ++i)
        n += static_cast<std::size_t>(std::popcount(words_[i] & other.words_[i]));
    return n;
}

std::vector<std::size_t> LabelSet::classes() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < words_.size() * 64; ++i)
        if (contains(i))
            out.push_back(i);
    return out;
}

bool LabelSet::operator==(const LabelSet& other) const noexcept
{
    return classes() == other.classes();
}

// ---- retrieval ------------------------------------------------------------

std::string RetrievalTask::name() const
{
    const auto sensor = [](Modality m) { return m == Modality::x ? "S1" : "S2"; };
    return std::string(sensor(query)) + "→" + sensor(target);
}

RetrievalTask parse_task(const std::string& text)
{
    std::string q, r;
    for (const std::string sep : {">", "→"}) {
        const auto pos = text.find(sep);
        if (pos != std::string::npos) {
            q = text.substr(0, pos);
            r = text.substr(pos + sep.size());
            break;
        }
    }
    const auto modality = [&](const std::string& s) {
        if (s == "S1")
            return Modality::x;
        if (s == "S2")
            return Modality::y;
        throw ParameterError("retrieval task \"" + text + "\": expected S1>S1, S1>S2, S2>S1 or S2>S2");
    };
    RetrievalTask task;
    task.query = modality(q);
    task.target = modality(r);
    return task;
}

namespace {

std::vector<double> row_norms(const Tensor& m)
{
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    const auto d = m.data();
    std::vector<double> norms(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j)
            s += d[i * cols + j] * d[i * cols + j];
        norms[i] = std::sqrt(s);
    }
    return norms;
}

}  // namespace

std::vector<std::vector<std::size_t>> retrieve(const Tensor& queries, std::span<const std::string> query_ids,
                                               const Tensor& gallery, std::span<const std::string> gallery_ids, std::size_t k,
                                               bool exclude_same_id)
{
    if (queries.rank() != 2 || gallery.rank() != 2)
        throw DimensionError("retrieve: embeddings must be matrices, got " + shape_str(queries.shape()) + " and " +
                             shape_str(gallery.shape()));
    if (queries.dim(1) != gallery.dim(1))
        throw DimensionError("retrieve: query width " + std::to_string(queries.dim(1)) + " differs from gallery width " +
                             std::to_string(gallery.dim(1)));
    if (gallery.dim(0) == 0)
        throw InputError("retrieve: empty gallery");
    if (query_ids.size() != queries.dim(0) || gallery_ids.size() != gallery.dim(0))
        throw DimensionError("retrieve: id lists do not match embedding rows");
    if (k == 0)
        throw ParameterError("retrieve: k must be at least 1");

    const std::size_t nq = queries.dim(0), ng = gallery.dim(0), width = queries.dim(1);
    const auto qn = row_norms(queries), gn = row_norms(gallery);
    const auto qd = queries.data(), gd = gallery.data();
    std::vector<std::vector<std::size_t>> out(nq);
    std::vector<double> sim(ng);
    for (std::size_t q = 0; q < nq; ++q) {
        for (std::size_t g = 0; g < ng; ++g) {
            double dot = 0.0;
            for (std::size_t j = 0; j < width; ++j)
                dot += qd[q * width + j] * gd[g * width + j];
            sim[g] = (qn[q] > 0.0 && gn[g] > 0.0) ? dot / (qn[q] * gn[g]) : 0.0;
        }
        std::vector<std::size_t> order;
        order.reserve(ng);
        for (std::size_t g = 0; g < ng; ++g)
            if (!(exclude_same_id && gallery_ids[g] == query_ids[q]))
                order.push_back(g);
        if (order.size() < k)
            throw InputError("retrieve: query \"" + query_ids[q] + "\" has only " + std::to_string(order.size()) +
                             " gallery candidates for k = " + std::to_string(k));
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
        order.resize(k);
        out[q] = std::move(order);
    }
    return out;
}

double retrieval_f1(const LabelSet& query, std::span<const LabelSet> retrieved, std::size_t k)
{
    if (k == 0 || k > retrieved.size())
        throw ParameterError("retrieval_f1: k = " + std::to_string(k) + " with " + std::to_string(retrieved.size()) +
                             " retrieved items");
    if (query.empty())
        throw InputError("retrieval_f1: query has an empty label set");
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        if (retrieved[i].empty())
            throw InputError("retrieval_f1: retrieved item " + std::to_string(i) + " has an empty label set");
        total += 2.0 * static_cast<double>(query.intersection_size(retrieved[i])) /
                 static_cast<double>(query.size() + retrieved[i].size());
    }
    return total / static_cast<double>(k);
}

double mean_retrieval_f1(std::span<const LabelSet> query_labels, std::span<const std::vector<std::size_t>> rankings,
                         std::span<const LabelSet> gallery_labels, std::size_t k)
{
    if (query_labels.size() != rankings.size() || rankings.empty())
        throw InputError("mean_retrieval_f1: " + std::to_string(query_labels.size()) + " query label sets for " +
                         std::to_string(rankings.size()) + " rankings");
    double total = 0.0;
    std::vector<LabelSet> retrieved;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
        retrieved.clear();
        for (std::size_t g : rankings[q])
            retrieved.push_back(gallery_labels[g]);
        total += retrieval_f1(query_labels[q], retrieved, k);
    }
    return 100.0 * total / static_cast<double>(rankings.size());
}

// ---- probe metrics --------------------------------------------------------

namespace {

void check_scores(const Tensor& scores, std::size_t truths)
{
    if (scores.rank() != 2 || scores.dim(1) < 2)
        throw DimensionError("probe metrics: scores must be [N×C] with C ≥ 2, got " + shape_str(scores.shape()));
    if (scores.dim(0) != truths)
        throw DimensionError("probe metrics: " + std::to_string(scores.dim(0)) + " score rows for " + std::to_string(truths) +
                             " ground-truth entries");
}

void exclude(MetricResult& r, std::size_t c)
{
    r.excluded_classes.push_back(c);
    r.warnings.push_back("class " + std::to_string(c) + " has no positives; excluded from the macro mean");
}

}  // namespace

MetricResult mean_average_precision(const Tensor& scores, std::span<const LabelSet> truths)
{
    check_scores(scores, truths.size());
    const std::size_t n = scores.dim(0), classes = scores.dim(1);
    MetricResult r;
    double total = 0.0;
    std::size_t counted = 0;
    std::vector<std::size_t> order(n);
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t positives = 0;
        for (const auto& t : truths)
            positives += t.contains(c) ? 1 : 0;
        if (positives == 0) {
            exclude(r, c);
            continue;
        }
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores(a, c) > scores(b, c); });
        double ap = 0.0;
        std::size_t hits = 0;
        for (std::size_t rank = 0; rank < n; ++rank)
            if (truths[order[rank]].contains(c)) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
            }
        total += ap / static_cast<double>(positives);
        ++counted;
    }
    if (counted == 0)
        throw InputError("mean_average_precision: no class has a positive example");
    r.percent = 100.0 * total / static_cast<double>(counted);
    return r;
}

MetricResult average_accuracy(const Tensor& scores, std::span<const std::size_t> truths)
{
    check_scores(scores, truths.size());
    const std::size_t n = scores.dim(0), classes = scores.dim(1);
    std::vector<std::size_t> size(classes, 0), correct(classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (truths[i] >= classes)
            throw InputError("average_accuracy: class " + std::to_string(truths[i]) + " outside " + std::to_string(classes) +
                             " score columns");
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (scores(i, c) > scores(i, best))
                best = c;
        ++size[truths[i]];
        correct[truths[i]] += best == truths[i] ? 1 : 0;
    }
    MetricResult r;
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (size[c] == 0) {
            exclude(r, c);
            continue;
        }
        total += static_cast<double>(correct[c]) / static_cast<double>(size[c]);
        ++counted;
    }
    if (counted == 0)
        throw InputError("average_accuracy: no samples");
    r.percent = 100.0 * total / static_cast<double>(counted);
    return r;
}

Tensor LinearProbe::scores(const Tensor& embeddings) const
{
    return add_row(matmul(embeddings, weight), bias).detach();
}

LinearProbe train_linear_probe(const Tensor& embeddings, std::span<const LabelSet> truths, std::size_t classes, ProbeTask task,
                               const ProbeConfig& cfg)
{
    if (embeddings.rank() != 2 || embeddings.dim(0) != truths.size() || embeddings.dim(0) == 0)
        throw DimensionError("linear probe: " + shape_str(embeddings.shape()) + " embeddings for " +
                             std::to_string(truths.size()) + " labels");
    if (classes < 2)
        throw ParameterError("linear probe: need at least two classes");
    const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);

    std::vector<double> targets(n * classes, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c : truths[i].classes()) {
            if (c >= classes)
                throw InputError("linear probe: label " + std::to_string(c) + " outside " + std::to_string(classes) + " classes");
            targets[i * classes + c] = 1.0;
        }

    Rng init(derive_seed(cfg.seed, {0x70726f6265ULL}));
    std::vector<double> w(d * classes);
    for (double& v : w)
        v = init.truncated_normal(0.02);
    LinearProbe probe{Tensor::parameter({d, classes}, std::move(w)), Tensor::parameter({classes}, std::vector<double>(classes, 0.0))};
    AdamW opt({{"weight", probe.weight}, {"bias", probe.bias}}, AdamWConfig{0.9, 0.999, 1e-8, 0.0});

    const Tensor x = embeddings.detach();
    const Tensor y = Tensor::from({n, classes}, std::move(targets));
    const std::size_t batch = std::max<std::size_t>(1, std::min(cfg.batch, n));
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(cfg.seed, {0x65706f6368ULL, epoch}));
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[rng.index(i)]);
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t count = std::min(batch, n - start);
            const std::span<const std::size_t> rows(order.data() + start, count);
            const Tensor xb = gather_rows(x, rows), yb = gather_rows(y, rows);
            const Tensor logits = add_row(matmul(xb, probe.weight), probe.bias);
            Tensor loss;
            if (task == ProbeTask::multilabel) {
                const Tensor softplus = log(add_scalar(exp(logits), 1.0));
                loss = mean(sub(softplus, mul(yb, logits)));
            } else {
                loss = scale(sum(mul(yb, log(softmax(logits, 1)))), -1.0 / static_cast<double>(count));
            }
            opt.zero_grad();
            loss.backward();
            opt.step(cfg.lr);
        }
    }
    return probe;
}

// ---- compute accounting ---------------------------------------------------

double c2c_ratio(double params, double flops) noexcept
{
    return (params / 1e6) / (flops / 1e9);
}

namespace {

using u64 = std::uint64_t;

u64 layer_norm_flops(u64 rows, u64 d)
{
    return 5 * rows * d;
}

u64 attention_flops(u64 t, u64 d, u64 heads)
{
    // q, k, v and output projections; per head scores, softmax and weighted values.
    return 8 * t * d * d + 4 * t * t * d + 5 * heads * t * t;
}

u64 moe_flops(u64 t, u64 d, u64 slots, u64 hidden)
{
    const u64 logits = 2 * slots * d * t;
    const u64 softmaxes = 2 * 5 * slots * t;
    const u64 slot_mix = 2 * slots * t * d;
    const u64 experts = slots * (2 * d * hidden + 2 * hidden * d);
    const u64 combine = 2 * t * slots * d;
    return logits + softmaxes + slot_mix + experts + combine;
}

u64 moe_block_flops(const CsmoeConfig& c, u64 t)
{
    return 2 * layer_norm_flops(t, c.d_enc) + attention_flops(t, c.d_enc, c.heads) + moe_flops(t, c.d_enc, c.slots, c.expert_hidden);
}

u64 mlp_block_flops(const CsmoeConfig& c, u64 t)
{
    return 2 * layer_norm_flops(t, c.d_dec) + attention_flops(t, c.d_dec, c.dec_heads) + 4 * t * c.d_dec * c.dec_mlp_hidden;
}

std::string group_of(const std::string& name)
{
    if (name.rfind("proj", 0) == 0)
        return "proj";
    // First three dotted components: "enc.x.block0.attn.wq" → "enc.x.block0".
    std::size_t pos = std::string::npos;
    for (int i = 0; i < 3; ++i) {
        pos = name.find('.', pos == std::string::npos ? 0 : pos + 1);
        if (pos == std::string::npos)
            return name;
    }
    return name.substr(0, pos);
}

}  // namespace

ComputeProfile profile(const CsmoeConfig& cfg)
{
    cfg.validate();
    const u64 P = cfg.tokens();
    const u64 V = P - masked_count(P, cfg.mask_ratio);
    const u64 T = V + 1;

    std::map<std::string, u64> flops;
    for (Modality m : {Modality::x, Modality::y}) {
        const std::string e = std::string("enc.") + modality_name(m);
        flops[e + ".patch_embed"] += 2 * V * cfg.token_width(m) * cfg.d_enc;
        for (std::size_t l = 0; l < cfg.enc_ms_layers; ++l)
            flops[e + ".block" + std::to_string(l)] += moe_block_flops(cfg, T);
        for (std::size_t l = 0; l < cfg.enc_cs_layers; ++l)
            flops["enc.cs.block" + std::to_string(l)] += moe_block_flops(cfg, T);
        flops["proj"] += 2 * cfg.d_enc * cfg.d_proj;
    }
    for (Modality target : {Modality::x, Modality::y}) {
        const std::string d = std::string("dec.") + modality_name(target);
        for (Modality source : {Modality::x, Modality::y}) {
            flops[d + ".from_encoder"] += 2 * T * cfg.d_enc * cfg.d_dec;
            for (std::size_t l = 0; l < cfg.dec_layers; ++l)
                flops[d + ".block" + std::to_string(l)] += mlp_block_flops(cfg, P);
            flops[d + ".head_from_" + modality_name(source)] += 2 * P * cfg.d_dec * cfg.token_width(target);
        }
    }

    ComputeProfile p;
    p.tokens = P;
    p.visible_tokens = V;
    std::map<std::string, std::size_t> index;
    for (const auto& [name, shape] : parameter_manifest(cfg)) {
        const std::string g = group_of(name);
        auto [it, inserted] = index.try_emplace(g, p.layers.size());
        if (inserted)
            p.layers.push_back({g, 0, 0});
        p.layers[it->second].params += shape_numel(shape);
    }
    for (const auto& [g, f] : flops) {
        auto [it, inserted] = index.try_emplace(g, p.layers.size());
        if (inserted)
            p.layers.push_back({g, 0, 0});
        p.layers[it->second].flops += f;
    }
    for (const auto& l : p.layers) {
        p.params += l.params;
        p.flops += l.flops;
    }
    p.c2c = c2c_ratio(static_cast<double>(p.params), static_cast<double>(p.flops));
    return p;
}

InstrumentedCount instrumented_count(const CsmoeConfig& cfg)
{
    const CsmoeModel model = init_model(cfg);
    Rng rng(derive_seed(cfg.seed, {0x696e7374ULL}));
    const auto image = [&](Modality m) {
        std::vector<double> v(cfg.channels(m) * cfg.image_side * cfg.image_side);
        for (double& e : v)
            e = rng.normal();
        return Tensor::from({cfg.channels(m), cfg.image_side, cfg.image_side}, std::move(v));
    };
    const Tensor x = image(Modality::x), y = image(Modality::y);
    const auto [mx, my] = draw_masks(cfg, cfg.seed);
    const CounterScope scope;
    const ForwardArtifacts a = forward(model, x, y, mx, my);
    const OpCounters delta = scope.delta();
    return {model.parameter_count(), delta.flops, delta.expert_calls};
}

nlohmann::json profile_to_json(const ComputeProfile& p)
{
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : p.layers)
        layers.push_back({{"name", l.name}, {"params", l.params}, {"flops", l.flops}});
    return {{"convention", kFlopConvention},
            {"params", p.params},
            {"flops", p.flops},
            {"c2c", p.c2c},
            {"tokens", p.tokens},
            {"visible_tokens", p.visible_tokens},
            {"layers", std::move(layers)}};
}

std::string profile_table(const ComputeProfile& p)
{
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %16s %18s\n", "layer", "params", "flops");
    os << line;
    for (const auto& l : p.layers) {
        std::snprintf(line, sizeof line, "%-28s %16llu %18llu\n", l.name.c_str(), static_cast<unsigned long long>(l.params),
                      static_cast<unsigned long long>(l.flops));
        os << line;
    }
    std::snprintf(line, sizeof line, "%-28s %16llu %18llu\n", "total", static_cast<unsigned long long>(p.params),
                  static_cast<unsigned long long>(p.flops));
    os << line;
    std::snprintf(line, sizeof line, "c2c = %.4f (params in millions / FLOPs in billions)\n", p.c2c);
    os << line;
    return os.str();
}

}  // namespace csmoe
