// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include "csmoe/errors.hpp"
#include "csmoe/gradcheck.hpp"
#include "csmoe/rng.hpp"
#include "csmoe/tnsr_io.hpp"
#include "csmoe/tokenizer.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace csmoe::cli {

namespace fs = std::filesystem;

namespace {

std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::trunc)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | mode);
    if (!os)
        throw DataError("cannot open " + path.string() + " for writing");
    return os;
}

void write_json(const nlohmann::json& j, const std::string& path)
{
    if (path.empty()) {
        std::cout << j.dump(2) << '\n';
        return;
    }
    auto os = open_output(path);
    os << j.dump(2) << '\n';
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
        return {};
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

/// Runs body(i) for i in [0, n) on up to `threads` workers.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& body)
{
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i)
            body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                try {
                    for (std::size_t i = next++; i < n; i = next++)
                        body(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                    next = n;
                }
            });
    }
    if (failure)
        std::rethrow_exception(failure);
}

}  // namespace

// ---- sample ---------------------------------------------------------------

int run_sample(const RunConfig& cfg, const GlobalOptions& g, const SampleOptions& o)
{
    sampler::GaConfig ga = cfg.ga;
    if (o.target)
        ga.target = *o.target;
    if (o.iterations)
        ga.iterations = *o.iterations;
    if (o.population)
        ga.population = *o.population;
    if (o.crossover_rate)
        ga.crossover_rate = *o.crossover_rate;
    if (o.stagnation)
        ga.stagnation_limit = *o.stagnation;
    try {
        ga.validate();
    } catch (const ConfigError& e) {
        throw UsageError(std::string("sample: ") + e.what());
    }

    const auto archive = sampler::load_archive_csv(o.archive);
    const auto climate = sampler::load_grid(o.climate);
    const auto thematic = sampler::load_grid(o.thematic);
    const auto result = sampler::sample_archive(archive, climate, thematic, ga, {o.baseline, g.threads});

    if (o.out.empty()) {
        sampler::write_selection_csv(std::cout, result.selection);
    } else {
        auto os = open_output(o.out);
        sampler::write_selection_csv(os, result.selection);
    }
    if (!o.report.empty())
        write_json(sampler::report_to_json(result.report), o.report);
    std::cerr << "sample: " << result.report.archive_size << " entries, " << result.report.described_size << " described, "
              << result.report.strata.size() << " strata, " << result.report.selected_size << " selected\n";
    return 0;
}

// ---- split-tiles ----------------------------------------------------------

int run_split_tiles(const RunConfig&, const GlobalOptions&, const SplitTilesOptions& o)
{
    if (o.patch == 0)
        throw UsageError("split-tiles: --patch must be positive");
    if (!fs::is_directory(o.input))
        throw DataError("split-tiles: input directory " + o.input + " does not exist");
    std::vector<fs::path> tiles;
    for (const auto& entry : fs::directory_iterator(o.input))
        if (entry.is_regular_file() && entry.path().extension() == ".tnsr")
            tiles.push_back(entry.path());
    std::sort(tiles.begin(), tiles.end());
    fs::create_directories(o.out);

    nlohmann::json summary = {{"tiles", tiles.size()}, {"kept", 0}, {"discarded_small", 0}, {"discarded_invalid", 0}};
    for (const auto& path : tiles) {
        Tensor tile = load_tnsr(path);
        if (tile.rank() == 2)
            tile = reshape(tile, {1, tile.dim(0), tile.dim(1)});
        if (tile.rank() != 3)
            throw DataError(path.string() + ": expected a C×H×W tile, got " + shape_str(tile.shape()));
        const TileSplit split = split_tile(tile, o.patch, o.sentinel);
        const std::string stem = path.stem().string();
        for (std::size_t i = 0; i < split.patches.size(); ++i) {
            const auto [r, c] = split.cells[i];
            save_tnsr(fs::path(o.out) / (stem + "_r" + std::to_string(r) + "_c" + std::to_string(c) + ".tnsr"), split.patches[i]);
        }
        const auto& rep = split.report;
        write_json({{"tile", path.filename().string()},
                    {"tile_height", rep.tile_height},
                    {"tile_width", rep.tile_width},
                    {"patch_size", rep.patch_size},
                    {"kept", rep.kept},
                    {"discarded_small", rep.discarded_small},
                    {"discarded_invalid", rep.discarded_invalid}},
                   (fs::path(o.out) / (stem + ".json")).string());
        summary["kept"] = summary["kept"].get<std::size_t>() + rep.kept;
        summary["discarded_small"] = summary["discarded_small"].get<std::size_t>() + rep.discarded_small;
        summary["discarded_invalid"] = summary["discarded_invalid"].get<std::size_t>() + rep.discarded_invalid;
    }
    std::cout << summary.dump(2) << '\n';
    return 0;
}

// ---- pretrain-toy ---------------------------------------------------------

int run_pretrain(const RunConfig& cfg, const GlobalOptions&, const PretrainOptions& o)
{
    const std::string out_dir = !o.out.empty() ? o.out : cfg.paths.out_dir;
    if (out_dir.empty())
        throw UsageError("pretrain-toy: --out is required");
    std::string data_dir = !o.data.empty() ? o.data : cfg.paths.data_dir;
    if (o.synthesize > 0 && !o.data.empty())
        throw UsageError("pretrain-toy: --data and --synthesize are mutually exclusive");
    if (o.synthesize > 0) {
        data_dir = (fs::path(out_dir) / "data").string();
        synthesize_pairs(data_dir, o.synthesize, cfg.model, derive_seed(cfg.seed, {0x64617461ULL}));
    }
    if (data_dir.empty())
        throw UsageError("pretrain-toy: give --data DIR or --synthesize N");

    TrainerConfig tc = cfg.trainer;
    if (o.steps)
        tc.steps = *o.steps;
    if (o.epochs)
        tc.epochs = *o.epochs;
    if (o.batch)
        tc.batch = *o.batch;
    if (o.lr)
        tc.lr = *o.lr;
    try {
        tc.validate();
    } catch (const ConfigError& e) {
        throw UsageError(std::string("pretrain-toy: ") + e.what());
    }

    Trainer trainer(cfg.model, tc, cfg.loss, load_paired_dir(data_dir, cfg.model), cfg.seed);
    if (!o.resume.empty())
        trainer.restore(o.resume);
    const auto mode = o.resume.empty() ? std::ios::trunc : std::ios::app;
    auto log = open_output(fs::path(out_dir) / "loss.jsonl", mode);
    auto val_log = open_output(fs::path(out_dir) / "val.jsonl", mode);
    trainer.run(o.stop_after, &log, &val_log);
    const fs::path checkpoint = fs::path(out_dir) / "checkpoint.ckpt";
    trainer.save(checkpoint);

    std::cout << nlohmann::json{{"checkpoint", checkpoint.string()},
                                {"step", trainer.step()},
                                {"total_steps", trainer.total_steps()},
                                {"train_pairs", trainer.split().train.size()},
                                {"validation_pairs", trainer.split().validation.size()}}
                     .dump(2)
              << '\n';
    return 0;
}

// ---- grad-check -----------------------------------------------------------

int run_grad_check(const RunConfig& cfg, const GlobalOptions&, const GradCheckFlags& o)
{
    if (o.batch < 2)
        throw UsageError("grad-check: --batch must be at least 2");
    if (!(o.step > 0.0) || !(o.tolerance > 0.0) || o.max_elements == 0)
        throw UsageError("grad-check: --step, --tolerance and --max-elements must be positive");
    if (!(o.init_scale > 0.0))
        throw UsageError("grad-check: --init-scale must be positive");
    const CsmoeModel model = random_model(cfg.model, cfg.seed, o.init_scale);
    std::vector<PairedSample> data;
    std::vector<std::pair<MaskPair, MaskPair>> masks;
    for (std::size_t i = 0; i < o.batch; ++i) {
        data.push_back(synthetic_pair(cfg.model, derive_seed(cfg.seed, {0x6764ULL, i}), "pair" + std::to_string(i)));
        masks.push_back(draw_masks(cfg.model, derive_seed(cfg.seed, {0x676dULL, i})));
    }
    const auto loss_fn = [&] {
        std::vector<ForwardArtifacts> batch;
        for (std::size_t i = 0; i < data.size(); ++i)
            batch.push_back(forward(model, data[i].x, data[i].y, masks[i].first, masks[i].second));
        return loss_total(model, batch, cfg.loss).total_tensor;
    };
    const GradCheckReport report =
        check_gradients(loss_fn, model.parameters, GradCheckOptions{o.step, o.max_elements, derive_seed(cfg.seed, {0x6763ULL})});

    std::string worst;
    double worst_error = -1.0;
    for (const auto& [name, err] : report.per_parameter_errors)
        if (err > worst_error) {
            worst_error = err;
            worst = name;
        }
    const bool passed = report.max_relative_error <= o.tolerance;
    nlohmann::ordered_json j;
    j["max_relative_error"] = report.max_relative_error;
    j["tolerance"] = o.tolerance;
    j["passed"] = passed;
    j["step"] = report.step_size;
    j["checked_elements"] = report.checked_elements;
    j["parameters"] = model.parameter_count();
    j["init_scale"] = o.init_scale;
    j["worst_parameter"] = worst;
    std::cout << j.dump(2) << '\n';
    return passed ? 0 : 3;
}

// ---- eval-retrieval -------------------------------------------------------

namespace {

struct EmbeddingSet
{
    std::vector<std::string> ids;
    Tensor embeddings;  // [N × d]
};

EmbeddingSet load_embeddings(const std::string& source, Modality modality, const CsmoeModel* model, EmbeddingStrategy strategy,
                             std::size_t threads)
{
    EmbeddingSet set;
    if (fs::is_directory(source)) {
        if (model == nullptr)
            throw UsageError("eval-retrieval: --checkpoint is required when " + source + " holds images");
        const std::string suffix = std::string("_") + modality_name(modality);
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(source)) {
            const std::string stem = entry.path().stem().string();
            if (entry.is_regular_file() && entry.path().extension() == ".tnsr" && stem.size() > suffix.size() &&
                stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0)
                files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty())
            throw DataError("eval-retrieval: no *" + suffix + ".tnsr images in " + source);
        std::vector<Tensor> rows(files.size());
        parallel_for(files.size(), threads, [&](std::size_t i) {
            const Tensor e = embed_image(*model, load_tnsr(files[i]), modality, strategy);
            rows[i] = reshape(e, {1, e.numel()});
        });
        for (const auto& f : files) {
            const std::string stem = f.stem().string();
            set.ids.push_back(stem.substr(0, stem.size() - suffix.size()));
        }
        set.embeddings = rows.size() == 1 ? rows[0] : concat_rows(rows);
        return set;
    }
    set.embeddings = load_tnsr(source);
    if (set.embeddings.rank() != 2)
        throw DataError(source + ": embeddings must be an [N×d] matrix, got " + shape_str(set.embeddings.shape()));
    fs::path ids_path = source;
    ids_path.replace_extension(".ids");
    if (fs::exists(ids_path)) {
        std::ifstream is(ids_path);
        std::string line;
        while (std::getline(is, line))
            if (!trim(line).empty())
                set.ids.push_back(trim(line));
        if (set.ids.size() != set.embeddings.dim(0))
            throw DataError(ids_path.string() + ": " + std::to_string(set.ids.size()) + " ids for " +
                            std::to_string(set.embeddings.dim(0)) + " embedding rows");
    } else {
        for (std::size_t i = 0; i < set.embeddings.dim(0); ++i)
            set.ids.push_back(std::to_string(i));
    }
    return set;
}

/// CSV `id,labels` with semicolon-joined class codes; codes are indexed in sorted order.
std::map<std::string, LabelSet> load_labels(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw DataError("cannot open labels file " + path);
    std::string line;
    if (!std::getline(is, line) || trim(line) != "id,labels")
        throw DataError(path + ": header must be id,labels");
    std::vector<std::pair<std::string, std::vector<std::string>>> rows;
    std::set<std::string> vocabulary;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty())
            continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError(path + " line " + std::to_string(line_no) + ": expected id,labels");
        std::vector<std::string> codes;
        std::stringstream ss(line.substr(comma + 1));
        std::string code;
        while (std::getline(ss, code, ';'))
            if (!trim(code).empty()) {
                codes.push_back(trim(code));
                vocabulary.insert(trim(code));
            }
        if (codes.empty())
            throw DataError(path + " line " + std::to_string(line_no) + ": empty label set");
        rows.emplace_back(trim(line.substr(0, comma)), std::move(codes));
    }
    std::map<std::string, std::size_t> index;
    for (const auto& code : vocabulary)
        index.emplace(code, index.size());
    std::map<std::string, LabelSet> out;
    for (const auto& [id, codes] : rows) {
        LabelSet s;
        for (const auto& c : codes)
            s.insert(index.at(c));
        if (!out.emplace(id, s).second)
            throw DataError(path + ": duplicate id \"" + id + "\"");
    }
    return out;
}

std::vector<LabelSet> labels_for(const std::vector<std::string>& ids, const std::map<std::string, LabelSet>& labels,
                                 const std::string& path)
{
    std::vector<LabelSet> out;
    for (const auto& id : ids) {
        const auto it = labels.find(id);
        if (it == labels.end())
            throw DataError(path + ": no labels for id \"" + id + "\"");
        out.push_back(it->second);
    }
    return out;
}

}  // namespace

int run_eval_retrieval(const RunConfig& cfg, const GlobalOptions& g, const EvalRetrievalOptions& o)
{
    RetrievalTask task;
    try {
        task = parse_task(o.task);
        task.strategy = o.strategy.empty() ? cfg.eval.strategy : parse_strategy(o.strategy);
    } catch (const ParameterError& e) {
        throw UsageError(std::string("eval-retrieval: ") + e.what());
    }
    task.k = o.k.value_or(cfg.eval.k);
    if (task.k == 0)
        throw UsageError("eval-retrieval: --k must be at least 1");

    std::optional<CsmoeModel> model;
    if (!o.checkpoint.empty())
        model = load_checkpoint(o.checkpoint);
    const CsmoeModel* m = model ? &*model : nullptr;
    const EmbeddingSet queries = load_embeddings(o.queries, task.query, m, task.strategy, g.threads);
    const EmbeddingSet gallery = load_embeddings(o.gallery, task.target, m, task.strategy, g.threads);
    const auto labels = load_labels(o.labels);

    const auto rankings = retrieve(queries.embeddings, queries.ids, gallery.embeddings, gallery.ids, task.k, !task.cross_modal());
    const double f1 = mean_retrieval_f1(labels_for(queries.ids, labels, o.labels), rankings,
                                        labels_for(gallery.ids, labels, o.labels), task.k);
    nlohmann::ordered_json j;
    j["task"] = task.name();
    j["f1_percent"] = f1;
    j["n_queries"] = queries.ids.size();
    j["k"] = task.k;
    j["strategy"] = strategy_name(task.strategy);
    write_json(nlohmann::json(j), o.out);
    return 0;
}

// ---- flops ----------------------------------------------------------------

int run_flops(const RunConfig& cfg, const GlobalOptions&, const FlopsOptions& o)
{
    const ComputeProfile p = profile(cfg.model);
    nlohmann::json j = profile_to_json(p);
    // Cross-check against a real forward whenever that is cheap enough.
    if (o.verify || p.params <= 2'000'000) {
        const InstrumentedCount count = instrumented_count(cfg.model);
        j["instrumented"] = {{"params", count.params},
                             {"flops", count.flops},
                             {"expert_calls", count.expert_calls},
                             {"matches", count.params == p.params && count.flops == p.flops}};
        if (count.params != p.params || count.flops != p.flops)
            throw EvaluationError("flops: analytic and instrumented counts disagree");
    }
    write_json(j, o.out);
    std::cerr << profile_table(p);
    return 0;
}

}  // namespace csmoe::cli
