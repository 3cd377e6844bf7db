#include "poolnas/harness.hpp"

#include "poolnas/baselines.hpp"
#include "poolnas/cnn_backend.hpp"
#include "poolnas/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>

namespace poolnas {

namespace {

// Report entropy trajectories are block-averaged down to at most this many points.
constexpr std::size_t kTrajectoryPoints = 200;

class Clock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::vector<Candidate> sorted_by_score(std::vector<Candidate> c) {
    std::stable_sort(c.begin(), c.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
    return c;
}

// Full validation of every configuration on model 0.
std::vector<Candidate> validate_all(Evaluator& eval) {
    std::vector<Candidate> out;
    for (std::size_t c = 0; c < eval.num_configs(); ++c) {
        try {
            out.push_back({c, 0, eval.validate(c, 0)});
        } catch (const EvaluationError&) {
            throw;
        } catch (const std::exception& e) {
            throw EvaluationError("validating config " + std::to_string(c) + ": " + e.what(), c, 0);
        }
    }
    return out;
}

struct Loop {
    const ExperimentConfig& cfg;
    const std::vector<PoolingConfig>& configs;
    const RecordSink& sink;
    std::vector<RunRecord>& records;
    Clock clock;

    void emit(std::int64_t step, std::size_t c, std::size_t m, const StepOutcome& out,
              std::optional<double> tau, std::optional<double> entropy = std::nullopt) {
        RunRecord r;
        r.step = step;
        r.config = configs[c].to_string();
        r.model = static_cast<int>(m);
        r.accuracy = out.accuracy;
        r.tau = tau;
        r.loss = out.loss;
        r.entropy = entropy;
        r.wall_clock = clock.seconds();
        records.push_back(r);
        if (sink) sink(r);
    }
};

}  // namespace

std::string data_dir() {
    if (const char* env = std::getenv("POOLNAS_DATA_DIR"); env && *env) return env;
    return POOLNAS_DATA_DIR;
}

BenchmarkTable load_table_for(const ExperimentConfig& config) {
    const SearchSpace space = config.space();
    if (!config.benchmark.empty()) return load_benchmark_file(config.benchmark, space);
    if (!(space == resnet20_space()))
        throw ValidationError("no shipped benchmark table for space " + space.fingerprint() +
                              "; pass one with 'benchmark'");
    return load_benchmark_file(std::filesystem::path(data_dir()) / "resnet20_cifar10.tsv", space);
}

nlohmann::json rank_and_report(const std::vector<RunRecord>& records, const RankInputs& in,
                               const BenchmarkTable* table) {
    const auto configs = enumerate_configs(in.space);
    const std::size_t C = configs.size(), M = in.num_models;

    // Replay a(c, m) and visit counts.
    MixtureParams mp;
    mp.num_configs = C;
    mp.num_models = M;
    mp.beta = in.beta;
    mp.initial_accuracy = in.initial_accuracy;
    MixtureState state(mp);
    for (const auto& r : records) {
        const auto c = index_of(configs, PoolingConfig::parse(r.config));
        if (!c) throw ValidationError("record config " + r.config + " is not in the search space");
        if (r.model < 0 || static_cast<std::size_t>(r.model) >= M)
            throw ValidationError("record model " + std::to_string(r.model) + " out of range");
        state.update_accuracy(*c, static_cast<std::size_t>(r.model), r.accuracy);
    }
    std::vector<std::int64_t> visits(C, 0);
    for (std::size_t c = 0; c < C; ++c)
        for (auto v : state.visit_counts().row(c)) visits[c] += v;

    std::vector<Candidate> proxy;
    if (in.final_tau) {
        const auto joint = balance_ipf(row_stable_joint(state.ema_acc(), *in.final_tau), in.delta,
                                       in.ipf_max_iters);
        proxy = select_candidates(state, joint, C, SelectionMode::proxy);
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t m = argmax(state.ema_acc().row(c));
            proxy.push_back({c, m, state.ema_acc()(c, m)});
        }
        proxy = sorted_by_score(std::move(proxy));
    }

    // Unvisited configurations go last, keeping their relative order.
    auto demote_unvisited = [&](std::vector<Candidate> list) {
        std::stable_partition(list.begin(), list.end(),
                              [&](const Candidate& k) { return visits[k.config] > 0; });
        return list;
    };
    proxy = demote_unvisited(std::move(proxy));
    std::vector<Candidate> full;
    if (!in.full.empty()) {
        if (in.full.size() != C) throw ValidationError("full evaluation must cover every config");
        full = demote_unvisited(sorted_by_score(in.full));
    }

    auto ranking_json = [&](const std::vector<Candidate>& list) {
        nlohmann::json out = nlohmann::json::array();
        for (std::size_t i = 0; i < list.size(); ++i) {
            const auto& k = list[i];
            nlohmann::json e = {{"rank", i + 1},
                                {"config", configs[k.config].to_string()},
                                {"model", k.model},
                                {"score", k.score},
                                {"visits", visits[k.config]}};
            if (visits[k.config] == 0) e["unvisited"] = true;
            out.push_back(std::move(e));
        }
        return out;
    };

    nlohmann::json report;
    report["space"] = in.space.fingerprint();
    report["num_models"] = M;
    report["steps"] = records.size();
    report["ranking_proxy"] = ranking_json(proxy);
    report["ranking_full"] = full.empty() ? nlohmann::json(nullptr) : ranking_json(full);
    const auto& primary = full.empty() ? proxy : full;
    report["top_k"] = nlohmann::json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(in.top_k, C); ++i)
        report["top_k"].push_back(configs[primary[i].config].to_string());

    nlohmann::json visit_json = nlohmann::json::array();
    for (std::size_t c = 0; c < C; ++c) {
        auto row = state.visit_counts().row(c);
        visit_json.push_back({{"config", configs[c].to_string()},
                              {"visits", visits[c]},
                              {"per_model", std::vector<std::int64_t>(row.begin(), row.end())}});
    }
    report["visits"] = std::move(visit_json);

    // Block-averaged entropy trajectory over records that carry one.
    std::vector<const RunRecord*> with_entropy;
    for (const auto& r : records)
        if (r.entropy) with_entropy.push_back(&r);
    nlohmann::json trajectory = nlohmann::json::array();
    if (!with_entropy.empty()) {
        const std::size_t n = with_entropy.size();
        const std::size_t block = (n + kTrajectoryPoints - 1) / kTrajectoryPoints;
        for (std::size_t start = 0; start < n; start += block) {
            const std::size_t end = std::min(n, start + block);
            double h = 0.0, tau = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                h += *with_entropy[i]->entropy;
                tau += with_entropy[i]->tau.value_or(0.0);
            }
            const double k = static_cast<double>(end - start);
            trajectory.push_back({{"step", with_entropy[end - 1]->step},
                                  {"entropy", h / k},
                                  {"tau", tau / k}});
        }
    }
    report["entropy_trajectory"] = std::move(trajectory);

    // Score vectors indexed by config; unvisited configurations tie at the bottom.
    auto by_config = [&](const std::vector<Candidate>& list) {
        std::vector<double> s(C, 0.0);
        double floor = 0.0;
        for (const auto& k : list) floor = std::min(floor, k.score);
        for (const auto& k : list) s[k.config] = visits[k.config] > 0 ? k.score : floor - 1.0;
        return s;
    };
    const auto proxy_scores = by_config(proxy);
    const auto full_scores = full.empty() ? std::vector<double>{} : by_config(full);

    nlohmann::json scatter = nlohmann::json::array();
    for (std::size_t c = 0; c < C; ++c) {
        nlohmann::json e = {{"config", configs[c].to_string()}, {"proxy", proxy_scores[c]}};
        if (!full.empty()) e["full"] = full_scores[c];
        if (table) e["truth"] = table->at(c).mean();
        scatter.push_back(std::move(e));
    }
    report["scatter"] = std::move(scatter);

    if (table) {
        const auto truth = table->means();
        auto tau_or_null = [&](const std::vector<double>& s) -> nlohmann::json {
            try {
                return kendall_tau(s, truth);
            } catch (const ValidationError&) {
                return nullptr;
            }
        };
        report["kendall_tau"] = {{"proxy", tau_or_null(proxy_scores)},
                                 {"full", full.empty() ? nlohmann::json(nullptr)
                                                       : tau_or_null(full_scores)}};
        report["true_best"] = configs[table->best_config()].to_string();
    }
    return report;
}

SearchOutcome run_search_with(const ExperimentConfig& cfg, const EvaluatorFactory& factory,
                              const BenchmarkTable* table, const RecordSink& sink) {
    cfg.validate();
    const SearchSpace space = cfg.space();
    const auto configs = enumerate_configs(space);
    const std::size_t C = configs.size();
    const auto M = static_cast<std::size_t>(cfg.num_models);

    SearchOutcome outcome;
    Loop loop{cfg, configs, sink, outcome.records, {}};
    Rng config_rng = Rng::substream(cfg.seed, "config");
    Rng model_rng = Rng::substream(cfg.seed, "model");
    std::optional<double> final_tau;
    std::vector<Candidate> full;
    double diversity = -1.0;
    std::optional<std::size_t> mcts_pick;
    auto note_diversity = [&](const Evaluator& eval) {
        if (auto* s = dynamic_cast<const SurrogateEvaluator*>(&eval))
            diversity = mean_history_diversity(s->distances(), s->interference());
    };

    std::int64_t step = 0;
    try {
        switch (cfg.method) {
        case Method::balanced: {
            auto eval = factory(M, cfg.seed);
            MixtureParams mp;
            mp.num_configs = C;
            mp.num_models = M;
            mp.beta = cfg.beta;
            mp.total_steps = cfg.iterations;
            mp.tau_init = cfg.tau_init;
            mp.tau_min = cfg.tau_min;
            mp.initial_accuracy = cfg.initial_accuracy;
            MixtureState state(mp);
            for (; step < cfg.iterations; ++step) {
                const double tau = temperature_at(state, step);
                const auto joint = balance_ipf(row_stable_joint(state.ema_acc(), tau), cfg.delta,
                                               cfg.ipf_max_iters);
                const auto [c, m] = sample_pair(joint, config_rng, model_rng);
                const StepOutcome out = eval->train_step(c, m);
                state.update_accuracy(c, m, out.accuracy);
                loop.emit(step, c, m, out, tau, mean_conditional_entropy(joint));
            }
            final_tau = temperature_at(state, cfg.iterations);
            const auto joint = balance_ipf(row_stable_joint(state.ema_acc(), *final_tau),
                                           cfg.delta, cfg.ipf_max_iters);
            full = select_candidates(state, joint, C, SelectionMode::full, eval.get());
            note_diversity(*eval);
            break;
        }
        case Method::spos: {
            auto eval = factory(1, cfg.seed);
            for (; step < cfg.iterations; ++step) {
                const std::size_t c = spos_sample(C, config_rng);
                loop.emit(step, c, 0, eval->train_step(c, 0), std::nullopt);
            }
            full = validate_all(*eval);
            note_diversity(*eval);
            break;
        }
        case Method::bse: {
            auto eval = factory(1, cfg.seed);
            BseState bse(C, cfg.iterations, 1.0, cfg.bse_inv_temp_max, cfg.beta,
                         cfg.initial_accuracy);
            for (; step < cfg.iterations; ++step) {
                const double inv_temp = bse.inv_temp();
                const std::size_t c = config_rng.categorical(bse_probs(bse));
                const StepOutcome out = eval->train_step(c, 0);
                bse.observe(c, out.accuracy);
                loop.emit(step, c, 0, out, 1.0 / inv_temp);
            }
            full = validate_all(*eval);
            note_diversity(*eval);
            break;
        }
        case Method::mcts:
        case Method::mcts_warmup: {
            auto eval = factory(1, cfg.seed);
            MctsTree tree(space, configs);
            const std::int64_t warmup =
                cfg.method == Method::mcts ? 0
                                           : (cfg.warmup < 0 ? static_cast<std::int64_t>(C)
                                                             : cfg.warmup);
            for (; step < cfg.iterations; ++step) {
                const auto path = tree.select_path(cfg.explore_c, step < warmup, config_rng);
                const StepOutcome out = eval->train_step(path.config, 0);
                tree.backpropagate(path, out.accuracy);
                loop.emit(step, path.config, 0, out, std::nullopt);
            }
            full = validate_all(*eval);
            mcts_pick = tree.best_config();
            note_diversity(*eval);
            break;
        }
        case Method::bruteforce: {
            // Each configuration trains alone on fresh weights.
            const std::int64_t per_config =
                std::max<std::int64_t>(1, cfg.iterations / static_cast<std::int64_t>(C));
            for (std::size_t c = 0; c < C; ++c) {
                auto eval = factory(1, splitmix64(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (c + 1))));
                for (std::int64_t k = 0; k < per_config; ++k, ++step)
                    loop.emit(step, c, 0, eval->train_step(c, 0), std::nullopt);
                full.push_back({c, 0, eval->validate(c, 0)});
            }
            break;
        }
        }
    } catch (const std::exception& e) {
        throw RunAborted("run aborted at step " + std::to_string(step) + ": " + e.what(), step);
    }

    RankInputs inputs(space);
    inputs.num_models = cfg.method == Method::balanced ? M : 1;
    inputs.beta = cfg.beta;
    inputs.initial_accuracy = cfg.initial_accuracy;
    inputs.final_tau = final_tau;
    inputs.delta = cfg.delta;
    inputs.ipf_max_iters = cfg.ipf_max_iters;
    inputs.full = full;
    inputs.top_k = cfg.top_k;
    outcome.report = rank_and_report(outcome.records, inputs, table);
    outcome.full_ranking = sorted_by_score(full);
    if (mcts_pick) {
        // The most visited leaf is the tree's answer, whatever validates higher.
        outcome.report["mcts_pick"] = configs[*mcts_pick].to_string();
        std::stable_partition(outcome.full_ranking.begin(), outcome.full_ranking.end(),
                              [&](const Candidate& k) { return k.config == *mcts_pick; });
    }
    for (const auto& e : outcome.report["ranking_proxy"])
        outcome.proxy_ranking.push_back(
            {*index_of(configs, PoolingConfig::parse(e["config"].get<std::string>())),
             e["model"].get<std::size_t>(), e["score"].get<double>()});

    nlohmann::json run = cfg.to_json();
    run.erase("output");
    outcome.report["experiment"] = std::move(run);
    outcome.report["method"] = to_string(cfg.method);
    outcome.report["backend"] = to_string(cfg.backend);
    if (diversity >= 0.0) outcome.report["mean_history_diversity"] = diversity;
    return outcome;
}

SearchOutcome run_search(const ExperimentConfig& cfg) {
    cfg.validate();
    std::optional<BenchmarkTable> table;
    EvaluatorFactory factory;
    if (cfg.backend == Backend::surrogate) {
        table.emplace(load_table_for(cfg));
        const InterferenceParams ip{cfg.lambda, cfg.sigma};
        factory = [&](std::size_t models, std::uint64_t seed) -> std::unique_ptr<Evaluator> {
            return std::make_unique<SurrogateEvaluator>(*table, models, ip,
                                                        static_cast<std::size_t>(cfg.history),
                                                        seed, cfg.validation_batches);
        };
    } else {
        factory = make_cnn_factory(cfg);
        const SearchSpace space = cfg.space();
        if (!cfg.benchmark.empty()) table.emplace(load_benchmark_file(cfg.benchmark, space));
    }

    std::optional<RecordWriter> writer;
    if (!cfg.output.empty()) {
        std::filesystem::create_directories(cfg.output);
        writer.emplace(std::filesystem::path(cfg.output) / "records.jsonl");
    }
    RecordSink sink;
    if (writer) sink = [&](const RunRecord& r) { writer->write(r); };
    SearchOutcome outcome = run_search_with(cfg, factory, table ? &*table : nullptr, sink);
    if (!cfg.output.empty())
        write_report(outcome.report, std::filesystem::path(cfg.output) / "report.json");
    return outcome;
}

}  // namespace poolnas
