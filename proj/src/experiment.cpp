#include "poolnas/experiment.hpp"

#include "poolnas/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace poolnas {

namespace {

const std::pair<Method, const char*> kMethods[] = {
    {Method::balanced, "balanced"}, {Method::spos, "spos"},
    {Method::bse, "bse"},           {Method::mcts, "mcts"},
    {Method::mcts_warmup, "mcts-warmup"}, {Method::bruteforce, "bruteforce"},
};

const std::pair<Backend, const char*> kBackends[] = {
    {Backend::surrogate, "surrogate"},
    {Backend::cnn, "cnn"},
};

// Reads doc[key] into field when present; type errors name the key.
template <typename T>
void read(const nlohmann::json& doc, const char* key, T& field) {
    auto it = doc.find(key);
    if (it == doc.end()) return;
    try {
        field = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config field '") + key + "': " + e.what());
    }
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ValidationError(message);
}

}  // namespace

std::string to_string(Method method) {
    for (auto [m, name] : kMethods)
        if (m == method) return name;
    return "?";
}

std::string to_string(Backend backend) {
    for (auto [b, name] : kBackends)
        if (b == backend) return name;
    return "?";
}

Method parse_method(const std::string& text) {
    for (auto [m, name] : kMethods)
        if (text == name) return m;
    throw ValidationError("unknown method '" + text +
                          "' (expected balanced, spos, bse, mcts, mcts-warmup or bruteforce)");
}

Backend parse_backend(const std::string& text) {
    for (auto [b, name] : kBackends)
        if (text == name) return b;
    throw ValidationError("unknown backend '" + text + "' (expected surrogate or cnn)");
}

SearchSpace ExperimentConfig::space() const {
    return SearchSpace(total_blocks, num_poolings, input_size, fixed_prefix);
}

void ExperimentConfig::validate() const {
    const SearchSpace s = space();  // checks L, p, input size, prefix
    (void)space_size(s);
    require(channels.empty() || static_cast<int>(channels.size()) == total_blocks,
            "channels must list one width per block");
    for (int c : channels) require(c >= 1, "channels must be positive");
    require(num_models >= 1, "num_models must be at least 1");
    require(iterations >= 1, "iterations must be positive");
    require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
    require(initial_accuracy >= 0.0 && initial_accuracy <= 1.0,
            "initial_accuracy must lie in [0, 1]");
    require(delta > 0.0, "delta must be positive");
    require(ipf_max_iters >= 1, "ipf_max_iters must be positive");
    require(tau_init > 0.0, "tau_init must be positive");
    require(tau_min <= tau_init, "tau_min must not exceed tau_init");
    require(explore_c >= 0.0, "explore_c must be non-negative");
    require(bse_inv_temp_max >= 1.0, "bse_inv_temp_max must be at least 1");
    require(top_k >= 1, "top_k must be positive");
    require(lambda >= 0.0, "lambda must be non-negative");
    require(sigma >= 0.0, "sigma must be non-negative");
    require(history >= 1, "history must be positive");
    require(validation_batches >= 1, "validation_batches must be positive");
    require(samples_per_class >= 1, "samples_per_class must be positive");
    require(num_classes >= 2 && num_classes <= 10, "num_classes must lie in [2, 10]");
    require(batch_size >= 8, "batch_size must be at least 8 for batch normalisation");
    require(eval_batch_size >= 1, "eval_batch_size must be positive");
    require(lr >= 0.0, "lr must be non-negative");
    require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
    require(weight_decay >= 0.0, "weight_decay must be non-negative");
    require(recalibration_batches >= 0, "recalibration_batches must be non-negative");
    if (method != Method::balanced && method != Method::bruteforce)
        require(num_models == 1, to_string(method) + " trains a single weight set (num_models 1)");
    if (backend == Backend::cnn)
        require(input_size == 16 || input_size == 32 || !dataset.empty(),
                "the synthetic dataset supports input_size 16 or 32");
}

nlohmann::json ExperimentConfig::to_json() const {
    return {
        {"method", to_string(method)},
        {"backend", to_string(backend)},
        {"total_blocks", total_blocks},
        {"num_poolings", num_poolings},
        {"input_size", input_size},
        {"fixed_prefix", fixed_prefix},
        {"channels", channels},
        {"num_models", num_models},
        {"iterations", iterations},
        {"beta", beta},
        {"initial_accuracy", initial_accuracy},
        {"delta", delta},
        {"ipf_max_iters", ipf_max_iters},
        {"tau_init", tau_init},
        {"tau_min", tau_min},
        {"explore_c", explore_c},
        {"warmup", warmup},
        {"bse_inv_temp_max", bse_inv_temp_max},
        {"seed", seed},
        {"top_k", top_k},
        {"benchmark", benchmark},
        {"lambda", lambda},
        {"sigma", sigma},
        {"history", history},
        {"validation_batches", validation_batches},
        {"dataset", dataset},
        {"samples_per_class", samples_per_class},
        {"num_classes", num_classes},
        {"batch_size", batch_size},
        {"eval_batch_size", eval_batch_size},
        {"lr", lr},
        {"momentum", momentum},
        {"weight_decay", weight_decay},
        {"recalibration_batches", recalibration_batches},
        {"output", output},
    };
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc, ExperimentConfig base) {
    if (!doc.is_object()) throw ValidationError("experiment config must be a JSON object");
    const nlohmann::json known = base.to_json();
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (!known.contains(it.key()))
            throw ValidationError("unknown config key '" + it.key() + "'");

    ExperimentConfig c = std::move(base);
    std::string text;
    if (doc.contains("method")) {
        read(doc, "method", text);
        c.method = parse_method(text);
    }
    if (doc.contains("backend")) {
        read(doc, "backend", text);
        c.backend = parse_backend(text);
    }
    read(doc, "total_blocks", c.total_blocks);
    read(doc, "num_poolings", c.num_poolings);
    read(doc, "input_size", c.input_size);
    read(doc, "fixed_prefix", c.fixed_prefix);
    read(doc, "channels", c.channels);
    read(doc, "num_models", c.num_models);
    read(doc, "iterations", c.iterations);
    read(doc, "beta", c.beta);
    read(doc, "initial_accuracy", c.initial_accuracy);
    read(doc, "delta", c.delta);
    read(doc, "ipf_max_iters", c.ipf_max_iters);
    read(doc, "tau_init", c.tau_init);
    read(doc, "tau_min", c.tau_min);
    read(doc, "explore_c", c.explore_c);
    read(doc, "warmup", c.warmup);
    read(doc, "bse_inv_temp_max", c.bse_inv_temp_max);
    read(doc, "seed", c.seed);
    read(doc, "top_k", c.top_k);
    read(doc, "benchmark", c.benchmark);
    read(doc, "lambda", c.lambda);
    read(doc, "sigma", c.sigma);
    read(doc, "history", c.history);
    read(doc, "validation_batches", c.validation_batches);
    read(doc, "dataset", c.dataset);
    read(doc, "samples_per_class", c.samples_per_class);
    read(doc, "num_classes", c.num_classes);
    read(doc, "batch_size", c.batch_size);
    read(doc, "eval_batch_size", c.eval_batch_size);
    read(doc, "lr", c.lr);
    read(doc, "momentum", c.momentum);
    read(doc, "weight_decay", c.weight_decay);
    read(doc, "recalibration_batches", c.recalibration_batches);
    read(doc, "output", c.output);
    return c;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
    return from_json(doc, ExperimentConfig{});
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what(), e.byte);
    }
    return ExperimentConfig::from_json(doc);
}

}  // namespace poolnas
