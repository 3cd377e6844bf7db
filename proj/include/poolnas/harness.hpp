#pragma once

#include "poolnas/evaluator.hpp"
#include "poolnas/experiment.hpp"
#include "poolnas/mixture.hpp"
#include "poolnas/records.hpp"
#include "poolnas/surrogate.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace poolnas {

using RecordSink = std::function<void(const RunRecord&)>;

/// Builds a backend with `num_models` weight sets whose randomness derives
/// from `seed` alone.
using EvaluatorFactory =
    std::function<std::unique_ptr<Evaluator>(std::size_t num_models, std::uint64_t seed)>;

struct SearchOutcome {
    std::vector<RunRecord> records;
    std::vector<Candidate> full_ranking;   ///< every configuration, best first
    std::vector<Candidate> proxy_ranking;
    nlohmann::json report;
};

/// Ranking inputs beyond the records themselves.
struct RankInputs {
    explicit RankInputs(SearchSpace s) : space(std::move(s)) {}

    SearchSpace space;
    std::size_t num_models = 1;
    double beta = 0.9;
    double initial_accuracy = 0.5;
    /// Balanced runs: per-config model is argmax p(m | c) of the balanced joint
    /// at this temperature. Otherwise argmax of the replayed a(c, m).
    std::optional<double> final_tau;
    double delta = kDefaultIpfDelta;
    int ipf_max_iters = kDefaultIpfMaxIters;
    /// Full-validation scores, one per configuration, any order; may be empty.
    std::vector<Candidate> full;
    int top_k = 5;
};

/// Deterministic report: rankings (full and proxy), visit counts, entropy
/// trajectory, scatter data and, given a table, Kendall tau. Configurations
/// never sampled carry "unvisited": true and rank last in both lists.
/// The proxy score replays a(c, m) from the records.
nlohmann::json rank_and_report(const std::vector<RunRecord>& records, const RankInputs& inputs,
                               const BenchmarkTable* table = nullptr);

/// Executes `config.method` against a backend built by `factory`. Each record
/// goes to `sink` before the next step starts; a failure is rethrown as
/// RunAborted carrying the step.
SearchOutcome run_search_with(const ExperimentConfig& config, const EvaluatorFactory& factory,
                              const BenchmarkTable* table, const RecordSink& sink = {});

/// run_search_with for the configured backend, writing records.jsonl and
/// report.json under `config.output` when it is set.
SearchOutcome run_search(const ExperimentConfig& config);

/// Shipped table for the ResNet20 space, or `config.benchmark` when given.
BenchmarkTable load_table_for(const ExperimentConfig& config);

/// Directory holding shipped data files: $POOLNAS_DATA_DIR or the build-time path.
std::string data_dir();

}  // namespace poolnas
