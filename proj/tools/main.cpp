// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include "csmoe/errors.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <iostream>

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

std::size_t threads_from_env()
{
    const char* env = std::getenv("CSMOE_THREADS");
    if (env == nullptr || *env == '\0')
        return 1;
    std::size_t n = 0;
    const std::string_view s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec != std::errc() || ptr != s.data() + s.size() || n == 0)
        throw csmoe::cli::UsageError("CSMOE_THREADS must be a positive integer, got \"" + std::string(s) + "\"");
    return n;
}

}  // namespace

int main(int argc, char** argv)
{
    using namespace csmoe;
    using namespace csmoe::cli;

    CLI::App app{"Cross-sensor Soft-MoE masked autoencoder toolkit"};
    app.require_subcommand(0, 1);
    app.fallthrough();

    GlobalOptions global;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    bool dump_config = false;
    auto* seed_opt = app.add_option("--seed", seed, "Root seed for every random choice");
    auto* threads_opt = app.add_option("--threads", threads, "Worker threads (default: $CSMOE_THREADS or 1)")->check(CLI::PositiveNumber);
    app.add_option("--config", global.config_path, "Run configuration JSON");
    app.add_flag("--dump-config", dump_config, "Print the fully resolved configuration and exit");

    SampleOptions sample;
    auto* sample_cmd = app.add_subcommand("sample", "Thematic-climatic GA sampling of an archive");
    sample_cmd->add_option("--archive", sample.archive, "Archive CSV (id,lon_min,lat_min,lon_max,lat_max)")->required();
    sample_cmd->add_option("--climate", sample.climate, "Climate class raster (GRID1)")->required();
    sample_cmd->add_option("--thematic", sample.thematic, "Thematic class raster (GRID1)")->required();
    sample_cmd->add_option("--target", sample.target, "Per-stratum target size N_s");
    sample_cmd->add_option("--iters", sample.iterations, "GA generations T");
    sample_cmd->add_option("--pop", sample.population, "Population size N_p");
    sample_cmd->add_option("--rc", sample.crossover_rate, "Per-gene crossover probability r_c");
    sample_cmd->add_option("--stagnation", sample.stagnation, "Stop a stratum after this many flat generations (0 = off)");
    sample_cmd->add_flag("--baseline", sample.baseline, "Also score an equal-size random subset per stratum");
    sample_cmd->add_option("--out", sample.out, "Selection CSV (default: stdout)");
    sample_cmd->add_option("--report", sample.report, "Sampling report JSON");

    SplitTilesOptions split;
    auto* split_cmd = app.add_subcommand("split-tiles", "Cut TNSR1 tiles into fixed-size patches");
    split_cmd->add_option("--input", split.input, "Directory of C×H×W TNSR1 tiles")->required();
    split_cmd->add_option("--out", split.out, "Output directory")->required();
    split_cmd->add_option("--patch", split.patch, "Patch side in pixels")->capture_default_str();
    split_cmd->add_option("--sentinel", split.sentinel, "Invalid-pixel value (default NaN)");

    PretrainOptions pretrain;
    auto* pretrain_cmd = app.add_subcommand("pretrain-toy", "Pretrain on paired TNSR1 images");
    pretrain_cmd->add_option("--data", pretrain.data, "Directory with <id>_x.tnsr / <id>_y.tnsr pairs");
    pretrain_cmd->add_option("--synthesize", pretrain.synthesize, "Generate N synthetic pairs under <out>/data");
    pretrain_cmd->add_option("--out", pretrain.out, "Output directory (checkpoint, loss.jsonl, val.jsonl)");
    pretrain_cmd->add_option("--steps", pretrain.steps, "Total optimizer steps");
    pretrain_cmd->add_option("--epochs", pretrain.epochs, "Epochs (when --steps is 0)");
    pretrain_cmd->add_option("--batch", pretrain.batch, "Mini-batch size");
    pretrain_cmd->add_option("--lr", pretrain.lr, "Peak learning rate");
    pretrain_cmd->add_option("--stop-after", pretrain.stop_after, "Stop (and checkpoint) once this step is reached");
    pretrain_cmd->add_option("--resume", pretrain.resume, "Continue from a checkpoint written by this command");

    GradCheckFlags grad;
    auto* grad_cmd = app.add_subcommand("grad-check", "Compare autodiff gradients of the total loss with central differences");
    grad_cmd->add_option("--batch", grad.batch, "Pairs in the batch")->capture_default_str();
    grad_cmd->add_option("--step", grad.step, "Finite-difference step h")->capture_default_str();
    grad_cmd->add_option("--tolerance", grad.tolerance, "Maximum relative error")->capture_default_str();
    grad_cmd->add_option("--init-scale", grad.init_scale, "Standard deviation of the random parameter point")->capture_default_str();
    grad_cmd->add_option("--max-elements", grad.max_elements, "Check a seeded subset above this many elements")->capture_default_str();

    EvalRetrievalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval-retrieval", "Uni- and cross-modal retrieval F1");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Model checkpoint (needed for image directories)");
    eval_cmd->add_option("--queries", eval.queries, "Query embeddings (TNSR1 [N×d]) or image directory")->required();
    eval_cmd->add_option("--gallery", eval.gallery, "Gallery embeddings (TNSR1 [N×d]) or image directory")->required();
    eval_cmd->add_option("--labels", eval.labels, "CSV id,labels with ;-joined class codes")->required();
    eval_cmd->add_option("--task", eval.task, "S1>S1, S1>S2, S2>S1 or S2>S2")->required();
    eval_cmd->add_option("--k", eval.k, "Retrieval depth");
    eval_cmd->add_option("--strategy", eval.strategy, "avg_wo_cls, avg_all, only_cls, norm_cls or norm_proj_cls");
    eval_cmd->add_option("--out", eval.out, "Result JSON (default: stdout)");

    FlopsOptions flops;
    auto* flops_cmd = app.add_subcommand("flops", "Parameter and FLOP accounting");
    flops_cmd->add_flag("--verify", flops.verify, "Cross-check against an instrumented forward even for large models");
    flops_cmd->add_option("--out", flops.out, "Profile JSON (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        global.threads = *threads_opt ? threads : threads_from_env();

        RunConfig cfg = global.config_path.empty() ? RunConfig{} : load_run_config(global.config_path);
        if (*seed_opt) {
            cfg.seed = seed;
            global.seed = seed;
        }
        cfg.resolve();

        if (dump_config) {
            std::cout << run_config_to_json(cfg).dump(2) << '\n';
            return 0;
        }
        if (sample_cmd->parsed())
            return run_sample(cfg, global, sample);
        if (split_cmd->parsed())
            return run_split_tiles(cfg, global, split);
        if (pretrain_cmd->parsed())
            return run_pretrain(cfg, global, pretrain);
        if (grad_cmd->parsed())
            return run_grad_check(cfg, global, grad);
        if (eval_cmd->parsed())
            return run_eval_retrieval(cfg, global, eval);
        if (flops_cmd->parsed())
            return run_flops(cfg, global, flops);
        std::cerr << app.help();
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << (global.config_path.empty() ? "" : "--config: ") << e.what() << '\n';
        return kExitUsage;
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
}
