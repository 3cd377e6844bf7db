#pragma once

#include "poolnas/search_space.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace poolnas {

enum class Method { balanced, spos, bse, mcts, mcts_warmup, bruteforce };
enum class Backend { surrogate, cnn };

std::string to_string(Method method);
std::string to_string(Backend backend);
Method parse_method(const std::string& text);
Backend parse_backend(const std::string& text);

/// Every knob of one search run. JSON keys are the member names; unknown keys
/// are rejected. `validate()` runs before any work starts.
struct ExperimentConfig {
    Method method = Method::balanced;
    Backend backend = Backend::surrogate;

    // Search space.
    int total_blocks = 10;
    int num_poolings = 2;
    int input_size = 32;
    int fixed_prefix = 1;
    std::vector<int> channels;  ///< per block; empty selects the default schedule

    // Search budget and controller.
    int num_models = 4;
    std::int64_t iterations = 20'000;
    double beta = 0.9;
    double initial_accuracy = 0.5;
    double delta = 1e-4;
    int ipf_max_iters = 10'000;
    double tau_init = 1.0;
    double tau_min = 0.0;  ///< <= 0 selects 1 / (100 M)
    double explore_c = 1.0;
    std::int64_t warmup = -1;  ///< mcts-warmup steps; < 0 selects one per configuration
    double bse_inv_temp_max = 100.0;
    std::uint64_t seed = 0;
    int top_k = 5;

    // Surrogate backend.
    std::string benchmark;  ///< table file; empty selects the shipped ResNet20 table
    double lambda = 0.05;
    double sigma = 0.01;
    int history = 64;
    int validation_batches = 100;

    // CNN backend.
    std::string dataset;  ///< CIFAR-10 binary file; empty selects the synthetic set
    int samples_per_class = 64;
    int num_classes = 10;
    int batch_size = 16;
    int eval_batch_size = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int recalibration_batches = 4;

    std::string output;  ///< directory for records.jsonl and report.json

    SearchSpace space() const;
    /// Throws ValidationError naming the first offending field.
    void validate() const;

    nlohmann::json to_json() const;
    /// Fields absent from `doc` keep the values already in `base`.
    static ExperimentConfig from_json(const nlohmann::json& doc, ExperimentConfig base);
    static ExperimentConfig from_json(const nlohmann::json& doc);

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig load_experiment_config(const std::string& path);

}  // namespace poolnas
