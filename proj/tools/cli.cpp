#include "cli.hpp"

#include "poolnas/cnn/network.hpp"
#include "poolnas/error.hpp"
#include "poolnas/experiment.hpp"
#include "poolnas/harness.hpp"
#include "poolnas/mixture.hpp"
#include "poolnas/records.hpp"
#include "poolnas/search_space.hpp"
#include "poolnas/surrogate.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>

namespace poolnas::cli {

namespace {

namespace fs = std::filesystem;

const std::vector<std::string> kSpaceKeys = {"total_blocks", "num_poolings", "input_size",
                                             "fixed_prefix"};

std::vector<std::string> all_config_keys() {
    const nlohmann::json defaults = ExperimentConfig{}.to_json();
    std::vector<std::string> keys;
    for (const auto& [key, value] : defaults.items()) keys.push_back(key);
    return keys;
}

/// Converts flag text to the JSON type of the field's default value.
nlohmann::json typed_value(const std::string& key, const nlohmann::json& like,
                           const std::string& text) {
    auto fail = [&] {
        throw ValidationError("--" + key + ": cannot parse '" + text + "'");
    };
    auto parse_int = [&](std::string_view s, auto& out) {
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) fail();
    };
    if (like.is_string()) return text;
    if (like.is_array()) {
        nlohmann::json list = nlohmann::json::array();
        std::string_view rest = text;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            int v = 0;
            parse_int(rest.substr(0, comma), v);
            list.push_back(v);
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        return list;
    }
    if (like.is_number_unsigned()) {
        std::uint64_t v = 0;
        parse_int(text, v);
        return v;
    }
    if (like.is_number_integer()) {
        std::int64_t v = 0;
        parse_int(text, v);
        return v;
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        fail();
    }
    if (used != text.size()) fail();
    return v;
}

/// ExperimentConfig fields as flags (`--num_models` or `--num-models`) plus
/// `--config <file>`; explicit flags override the file, which overrides defaults.
class ConfigFlags {
public:
    ConfigFlags(CLI::App& app, const std::vector<std::string>& keys) {
        app.add_option("--config", file_, "JSON experiment config");
        const nlohmann::json defaults = ExperimentConfig{}.to_json();
        for (const auto& key : keys) {
            std::string names = "--" + key;
            std::string dashed = key;
            std::replace(dashed.begin(), dashed.end(), '_', '-');
            if (dashed != key) names += ",--" + dashed;
            std::ostringstream help;
            help << "default " << defaults.at(key).dump();
            const auto& like = defaults.at(key);
            const char* type = like.is_string()           ? "TEXT"
                               : like.is_array()          ? "INT,..."
                               : like.is_number_integer() ? "INT"
                                                          : "FLOAT";
            options_[key] = app.add_option(names, text_[key], help.str())->type_name(type);
        }
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg = file_.empty() ? ExperimentConfig{} : load_experiment_config(file_);
        const nlohmann::json defaults = ExperimentConfig{}.to_json();
        nlohmann::json overrides = nlohmann::json::object();
        for (const auto& [key, opt] : options_)
            if (opt->count() > 0) overrides[key] = typed_value(key, defaults.at(key), text_.at(key));
        return ExperimentConfig::from_json(overrides, cfg);
    }

    bool given(const std::string& key) const {
        const auto it = options_.find(key);
        return it != options_.end() && it->second->count() > 0;
    }

private:
    std::string file_;
    std::map<std::string, std::string> text_;
    std::map<std::string, CLI::Option*> options_;
};

std::optional<BenchmarkTable> table_for(const ExperimentConfig& cfg, const std::string& override_path) {
    if (!override_path.empty()) return load_benchmark_file(override_path, cfg.space());
    if (cfg.backend == Backend::surrogate || !cfg.benchmark.empty()) return load_table_for(cfg);
    // The shipped table still applies to the default space.
    if (cfg.space() == resnet20_space()) return load_table_for(cfg);
    return std::nullopt;
}

ExperimentConfig experiment_of(const nlohmann::json& report, const fs::path& dir) {
    if (!report.contains("experiment"))
        throw ValidationError(dir.string() + "/report.json has no experiment section");
    return ExperimentConfig::from_json(report.at("experiment"));
}

int cmd_enumerate(const ExperimentConfig& cfg, bool count_only, std::ostream& out) {
    const SearchSpace space = cfg.space();
    if (count_only) {
        out << space_size(space) << "\n";
        return 0;
    }
    for (const auto& c : enumerate_configs(space)) out << c.to_string() << "\n";
    return 0;
}

int cmd_search(ExperimentConfig cfg, std::ostream& out) {
    if (cfg.output.empty())
        if (const char* env = std::getenv(kOutputEnv); env && *env) cfg.output = env;
    const SearchOutcome result = run_search(cfg);
    const auto& r = result.report;
    out << "method\t" << to_string(cfg.method) << "\n";
    out << "steps\t" << result.records.size() << "\n";
    out << "top_k";
    for (const auto& c : r.at("top_k")) out << "\t" << c.get<std::string>();
    out << "\n";
    if (r.contains("kendall_tau")) {
        const auto& k = r.at("kendall_tau");
        out << "kendall_proxy\t" << k.at("proxy").dump() << "\n";
        out << "kendall_full\t" << k.at("full").dump() << "\n";
        out << "true_best\t" << r.at("true_best").get<std::string>() << "\n";
    }
    if (!cfg.output.empty()) out << "output\t" << cfg.output << "\n";
    return 0;
}

std::vector<Candidate> candidates_from(const nlohmann::json& ranking,
                                       const std::vector<PoolingConfig>& configs) {
    std::vector<Candidate> list;
    if (!ranking.is_array()) return list;
    for (const auto& e : ranking) {
        const auto idx = index_of(configs, PoolingConfig::parse(e.at("config").get<std::string>()));
        if (!idx) throw ValidationError("ranking lists a config outside the space");
        list.push_back({*idx, e.at("model").get<std::size_t>(), e.at("score").get<double>()});
    }
    return list;
}

int cmd_rank(const std::string& results, const std::string& benchmark,
             std::optional<int> top_k, std::ostream& out) {
    const StoredResults stored = load_results(results);
    const ExperimentConfig cfg = experiment_of(stored.report, results);
    const SearchSpace space = cfg.space();
    const auto configs = enumerate_configs(space);
    RankInputs in(space);
    const bool balanced = cfg.method == Method::balanced;
    in.num_models = balanced ? static_cast<std::size_t>(cfg.num_models) : 1;
    in.beta = cfg.beta;
    in.initial_accuracy = cfg.initial_accuracy;
    if (balanced) {
        MixtureParams mp;
        mp.num_configs = configs.size();
        mp.num_models = in.num_models;
        mp.total_steps = cfg.iterations;
        mp.tau_init = cfg.tau_init;
        mp.tau_min = cfg.tau_min;
        in.final_tau = temperature_at(MixtureState(mp), cfg.iterations);
    }
    in.delta = cfg.delta;
    in.ipf_max_iters = cfg.ipf_max_iters;
    in.full = candidates_from(stored.report.value("ranking_full", nlohmann::json()), configs);
    in.top_k = top_k.value_or(cfg.top_k);
    const auto table = table_for(cfg, benchmark);
    nlohmann::json report = rank_and_report(stored.records, in, table ? &*table : nullptr);
    // Run metadata (experiment, method, tree pick) is not derivable from records.
    for (const auto& [key, value] : stored.report.items())
        if (!report.contains(key)) report[key] = value;
    out << dump_report(report);
    return 0;
}

struct GradcheckArgs {
    int blocks = 3, poolings = 1, size = 8, batch = 4, classes = 5;
    std::string pooling;
    std::string channels = "4,4,8";
    double epsilon = 1e-5, tolerance = 1e-4;
    std::size_t coordinates = 200;
    std::uint64_t seed = 0;
};

inline constexpr std::size_t kGradcheckMaxParams = 10'000;

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
    const SearchSpace space(a.blocks, a.poolings, a.size);
    const PoolingConfig config =
        a.pooling.empty() ? enumerate_configs(space).front() : PoolingConfig::parse(a.pooling);
    std::vector<int> channels;
    for (const auto& v : typed_value("channels", nlohmann::json::array(), a.channels))
        channels.push_back(v.get<int>());
    const auto plan = cnn::build_network(space, config, channels, 3, a.classes);
    if (cnn::parameter_count(plan) > kGradcheckMaxParams)
        throw ValidationError("gradient check is meant for networks of at most 10000 parameters, got " +
                              std::to_string(cnn::parameter_count(plan)));
    Rng rng = Rng::substream(a.seed, "init");
    auto ws = cnn::init_weights<double>(plan, 0, rng);
    // Random BN scales so every residual branch contributes.
    for (const auto& b : plan.blocks)
        for (int c = 0; c < b.out_channels; ++c) {
            ws.params[b.bn1_gamma + c] = 0.5 + rng.uniform();
            if (&b != &plan.blocks.front()) ws.params[b.bn2_gamma + c] = 0.5 + rng.uniform();
        }
    cnn::Tensor<double> batch(a.batch, 3, a.size, a.size);
    for (double& v : batch.data) v = rng.normal();
    std::vector<int> labels(static_cast<std::size_t>(a.batch));
    for (auto& l : labels) l = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(a.classes)));
    const auto r = cnn::gradient_check(plan, ws, batch, std::span<const int>(labels), a.epsilon,
                                       a.coordinates, a.seed);
    out << "config\t" << config.to_string() << "\n";
    out << "parameters\t" << cnn::parameter_count(plan) << "\n";
    out << "checked\t" << r.checked << "\n";
    out << "skipped\t" << r.skipped << "\n";
    out << "max_rel_error\t" << r.max_rel_error << "\n";
    const bool pass = r.max_rel_error < a.tolerance;
    out << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? 0 : 1;
}

int cmd_correlate(const std::vector<std::string>& dirs, const std::string& benchmark,
                  std::ostream& out) {
    out << "results\tkendall_proxy\tkendall_full\n";
    double sum_proxy = 0.0, sum_full = 0.0;
    std::size_t n_proxy = 0, n_full = 0;
    auto cell = [](std::optional<double> v) { return v ? std::to_string(*v) : std::string("-"); };
    for (const auto& dir : dirs) {
        const nlohmann::json report = read_report(fs::path(dir) / "report.json");
        const ExperimentConfig cfg = experiment_of(report, dir);
        const auto table = table_for(cfg, benchmark);
        if (!table) throw ValidationError(dir + ": no ground-truth table for this space");
        const auto configs = enumerate_configs(cfg.space());
        std::vector<double> truth, proxy, full;
        for (const auto& e : report.at("scatter")) {
            const auto idx = index_of(configs, PoolingConfig::parse(e.at("config").get<std::string>()));
            if (!idx) throw ValidationError(dir + ": scatter lists a config outside the space");
            truth.push_back(table->at(*idx).mean());
            proxy.push_back(e.at("proxy").get<double>());
            if (e.contains("full")) full.push_back(e.at("full").get<double>());
        }
        std::optional<double> tp = kendall_tau(proxy, truth), tf;
        if (full.size() == truth.size()) tf = kendall_tau(full, truth);
        sum_proxy += *tp;
        ++n_proxy;
        if (tf) {
            sum_full += *tf;
            ++n_full;
        }
        out << dir << "\t" << cell(tp) << "\t" << cell(tf) << "\n";
    }
    if (dirs.size() > 1)
        out << "mean\t" << cell(sum_proxy / static_cast<double>(n_proxy)) << "\t"
            << cell(n_full ? std::optional<double>(sum_full / static_cast<double>(n_full))
                           : std::nullopt)
            << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Pooling-placement search with balanced mixtures of SuperNets"};
    app.name("poolnas");
    app.require_subcommand(1);

    auto* enumerate = app.add_subcommand("enumerate", "List the configurations of a search space");
    ConfigFlags enumerate_flags(*enumerate, kSpaceKeys);
    bool count_only = false;
    enumerate->add_flag("--count", count_only, "Print only the number of configurations");

    auto* search = app.add_subcommand("search", "Run one search and write records and report");
    ConfigFlags search_flags(*search, all_config_keys());

    auto* rank = app.add_subcommand("rank", "Rebuild the report of a finished run");
    std::string rank_results, rank_benchmark;
    std::optional<int> rank_top_k;
    rank->add_option("--results", rank_results, "Run directory")->required();
    rank->add_option("--benchmark", rank_benchmark, "Ground-truth table file");
    rank->add_option("--top_k,--top-k", rank_top_k, "Length of the top-k list");

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of a tiny network");
    GradcheckArgs g;
    gradcheck->add_option("--total_blocks,--total-blocks", g.blocks)->capture_default_str();
    gradcheck->add_option("--num_poolings,--num-poolings", g.poolings)->capture_default_str();
    gradcheck->add_option("--input_size,--input-size", g.size)->capture_default_str();
    gradcheck->add_option("--pooling", g.pooling, "Configuration, e.g. [2,1]; default the first");
    gradcheck->add_option("--channels", g.channels, "Widths per block")->capture_default_str();
    gradcheck->add_option("--num_classes,--num-classes", g.classes)->capture_default_str();
    gradcheck->add_option("--batch", g.batch)->capture_default_str();
    gradcheck->add_option("--epsilon", g.epsilon)->capture_default_str();
    gradcheck->add_option("--coordinates", g.coordinates)->capture_default_str();
    gradcheck->add_option("--tolerance", g.tolerance)->capture_default_str();
    gradcheck->add_option("--seed", g.seed)->capture_default_str();

    auto* correlate = app.add_subcommand("correlate", "Kendall tau of run rankings against truth");
    std::vector<std::string> corr_results;
    std::string corr_benchmark;
    correlate->add_option("--results", corr_results, "Run directories")->required();
    correlate->add_option("--benchmark", corr_benchmark, "Ground-truth table file");

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (*enumerate) return cmd_enumerate(enumerate_flags.resolve(), count_only, out);
        if (*search) return cmd_search(search_flags.resolve(), out);
        if (*rank) return cmd_rank(rank_results, rank_benchmark, rank_top_k, out);
        if (*gradcheck) return cmd_gradcheck(g, out);
        if (*correlate) return cmd_correlate(corr_results, corr_benchmark, out);
    } catch (const RunAborted& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace poolnas::cli
