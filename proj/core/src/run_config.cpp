// SPDX-License-Identifier: Apache-2.0
#include "csmoe/run_config.hpp"

#include "csmoe/errors.hpp"

#include <fstream>

namespace csmoe {

namespace {

void reject_unknown(const nlohmann::json& j, const nlohmann::json& defaults, const std::string& section)
{
    if (!j.is_object())
        throw ConfigError(section + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!defaults.contains(key))
            throw ConfigError(section + ": unknown key \"" + key + "\"");
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& field, const std::string& section)
{
    if (!j.contains(key))
        return;
    try {
        field = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(section + ": field \"" + key + "\" has the wrong type");
    }
}

}  // namespace

void RunConfig::resolve()
{
    model.seed = seed;
    ga.seed = seed;
    probe.seed = seed;
    model.validate();
    ga.validate();
    trainer.validate();
    if (!(loss.tau_mi > 0.0) || !(loss.eps > 0.0) || loss.lambda < 0.0 || loss.gamma < 0.0)
        throw ConfigError("loss config: tau_mi and eps must be positive; lambda and gamma non-negative");
    if (eval.k == 0)
        throw ConfigError("eval config: k must be at least 1");
    if (probe.epochs == 0 || !(probe.lr > 0.0) || probe.batch == 0)
        throw ConfigError("probe config: epochs, lr and batch must be positive");
}

nlohmann::json loss_weights_to_json(const LossWeights& w)
{
    return {{"lambda", w.lambda},
            {"gamma", w.gamma},
            {"tau_mi", w.tau_mi},
            {"eps", w.eps},
            {"mi_include_positive", w.mi_include_positive}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j)
{
    LossWeights w;
    const std::string s = "loss config";
    reject_unknown(j, loss_weights_to_json(w), s);
    read(j, "lambda", w.lambda, s);
    read(j, "gamma", w.gamma, s);
    read(j, "tau_mi", w.tau_mi, s);
    read(j, "eps", w.eps, s);
    read(j, "mi_include_positive", w.mi_include_positive, s);
    return w;
}

nlohmann::json run_config_to_json(const RunConfig& c)
{
    return {
        {"seed", c.seed},
        {"model", config_to_json(c.model)},
        {"ga", sampler::ga_config_to_json(c.ga)},
        {"loss", loss_weights_to_json(c.loss)},
        {"trainer", trainer_config_to_json(c.trainer)},
        {"probe", {{"epochs", c.probe.epochs}, {"lr", c.probe.lr}, {"batch", c.probe.batch}, {"seed", c.probe.seed}}},
        {"eval", {{"k", c.eval.k}, {"strategy", strategy_name(c.eval.strategy)}}},
        {"paths", {{"data_dir", c.paths.data_dir}, {"out_dir", c.paths.out_dir}}},
    };
}

RunConfig run_config_from_json(const nlohmann::json& j)
{
    RunConfig c;
    const nlohmann::json defaults = run_config_to_json(c);
    if (j.is_object() && !j.empty()) {
        // A bare model config (every key a model field) is accepted as the model section.
        bool model_only = true;
        for (const auto& [key, value] : j.items())
            model_only = model_only && defaults.at("model").contains(key) && !(key == "seed" && j.size() == 1);
        if (model_only) {
            c.model = config_from_json(j);
            if (j.contains("seed"))
                c.seed = c.model.seed;
            return c;
        }
    }
    reject_unknown(j, defaults, "run config");
    read(j, "seed", c.seed, "run config");
    if (j.contains("model"))
        c.model = config_from_json(j.at("model"));
    if (j.contains("ga"))
        c.ga = sampler::ga_config_from_json(j.at("ga"));
    if (j.contains("loss"))
        c.loss = loss_weights_from_json(j.at("loss"));
    if (j.contains("trainer"))
        c.trainer = trainer_config_from_json(j.at("trainer"));
    if (j.contains("probe")) {
        const auto& p = j.at("probe");
        reject_unknown(p, defaults.at("probe"), "probe config");
        read(p, "epochs", c.probe.epochs, "probe config");
        read(p, "lr", c.probe.lr, "probe config");
        read(p, "batch", c.probe.batch, "probe config");
        read(p, "seed", c.probe.seed, "probe config");
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown(e, defaults.at("eval"), "eval config");
        read(e, "k", c.eval.k, "eval config");
        std::string strategy = strategy_name(c.eval.strategy);
        read(e, "strategy", strategy, "eval config");
        try {
            c.eval.strategy = parse_strategy(strategy);
        } catch (const ParameterError& err) {
            throw ConfigError(std::string("eval config: ") + err.what());
        }
    }
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        reject_unknown(p, defaults.at("paths"), "paths config");
        read(p, "data_dir", c.paths.data_dir, "paths config");
        read(p, "out_dir", c.paths.out_dir, "paths config");
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
    try {
        return run_config_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace csmoe
