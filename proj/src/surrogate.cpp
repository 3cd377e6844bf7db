#include "poolnas/surrogate.hpp"

#include "poolnas/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace poolnas {

namespace {

// "90.52" -> 9052; at most two decimals.
int parse_centi(std::string_view token, std::size_t line) {
    auto fail = [&] {
        throw ParseError("line " + std::to_string(line) + ": bad percentage '" +
                             std::string(token) + "'",
                         line);
    };
    const auto dot = token.find('.');
    std::string_view whole = token.substr(0, dot);
    std::string_view frac = dot == std::string_view::npos ? "" : token.substr(dot + 1);
    if (whole.empty() || frac.size() > 2) fail();
    int w = 0;
    auto [p1, e1] = std::from_chars(whole.data(), whole.data() + whole.size(), w);
    if (e1 != std::errc{} || p1 != whole.data() + whole.size() || w < 0) fail();
    int f = 0;
    if (!frac.empty()) {
        auto [p2, e2] = std::from_chars(frac.data(), frac.data() + frac.size(), f);
        if (e2 != std::errc{} || p2 != frac.data() + frac.size()) fail();
        if (frac.size() == 1) f *= 10;
    }
    return w * 100 + f;
}

std::string format_centi(int v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%d.%02d", v / 100, v % 100);
    return buf;
}

}  // namespace

BenchmarkTable::BenchmarkTable(const SearchSpace& space, std::vector<Row> rows) : space_(space) {
    const auto configs = enumerate_configs(space_);
    std::map<PoolingConfig, Row> by_config;
    std::vector<std::string> problems;
    for (auto& row : rows) {
        if (!index_of(configs, row.config))
            problems.push_back("extra " + row.config.to_string());
        else if (!by_config.emplace(row.config, row).second)
            problems.push_back("duplicate " + row.config.to_string());
        if (row.mean_centi_pct < 0 || row.mean_centi_pct > 10000 || row.std_centi_pct < 0)
            problems.push_back("out-of-range accuracy for " + row.config.to_string());
    }
    for (const auto& c : configs)
        if (!by_config.count(c)) problems.push_back("missing " + c.to_string());
    if (!problems.empty()) {
        std::string msg = "benchmark table does not match search space " + space_.fingerprint() + ":";
        for (const auto& p : problems) msg += " " + p + ";";
        throw ValidationError(msg);
    }
    for (const auto& c : configs) rows_.push_back(by_config.at(c));
}

const BenchmarkTable::Row& BenchmarkTable::at(const PoolingConfig& config) const {
    for (const auto& r : rows_)
        if (r.config == config) return r;
    throw ValidationError("configuration " + config.to_string() + " not in benchmark table");
}

std::vector<double> BenchmarkTable::means() const {
    std::vector<double> out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) out.push_back(r.mean());
    return out;
}

std::size_t BenchmarkTable::best_config() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows_.size(); ++i)
        if (rows_[i].mean_centi_pct > rows_[best].mean_centi_pct) best = i;
    return best;
}

std::string BenchmarkTable::to_text() const {
    std::string out = "# space " + space_.fingerprint() + "\n# config\tmean_pct\tstd_pct\n";
    for (const auto& r : rows_)
        out += r.config.to_string() + "\t" + format_centi(r.mean_centi_pct) + "\t" +
               format_centi(r.std_centi_pct) + "\n";
    return out;
}

BenchmarkTable load_benchmark(std::string_view text, const SearchSpace& space) {
    std::vector<BenchmarkTable::Row> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream fields(line);
        std::string config, mean, stdev, extra;
        if (!(fields >> config >> mean >> stdev) || (fields >> extra))
            throw ParseError("line " + std::to_string(line_no) +
                                 ": expected '<config> <mean %> <std %>'",
                             line_no);
        try {
            rows.push_back({PoolingConfig::parse(config), parse_centi(mean, line_no),
                            parse_centi(stdev, line_no)});
        } catch (const ValidationError& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
    }
    return BenchmarkTable(space, std::move(rows));
}

BenchmarkTable load_benchmark_file(const std::filesystem::path& path, const SearchSpace& space) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open benchmark table " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return load_benchmark(buf.str(), space);
}

SearchSpace resnet20_space() { return SearchSpace(10, 2, 32); }

InterferenceState::InterferenceState(std::size_t num_models, std::size_t capacity)
    : capacity_(capacity), buffers_(num_models) {
    if (num_models == 0) throw ValidationError("interference needs at least one model");
    if (capacity == 0) throw ValidationError("history capacity must be positive");
    for (auto& b : buffers_) b.items.resize(capacity);
}

std::vector<std::size_t> InterferenceState::history(std::size_t model) const {
    std::vector<std::size_t> out;
    for_each(model, [&](std::size_t c) { out.push_back(c); });
    return out;
}

std::size_t InterferenceState::history_size(std::size_t model) const {
    return buffers_.at(model).size;
}

void InterferenceState::register_training(std::size_t model, std::size_t config) {
    Buffer& b = buffers_.at(model);
    if (b.size < capacity_) {
        b.items[(b.head + b.size) % capacity_] = config;
        ++b.size;
    } else {
        b.items[b.head] = config;
        b.head = (b.head + 1) % capacity_;
    }
}

Matrix position_distances(const SearchSpace& space, std::span<const PoolingConfig> configs) {
    const double span = static_cast<double>(space.num_poolings()) *
                        (space.total_blocks() - 1 - space.fixed_prefix());
    std::vector<std::vector<int>> positions;
    positions.reserve(configs.size());
    for (const auto& c : configs) positions.push_back(config_to_positions(c));
    Matrix d(configs.size(), configs.size(), 0.0);
    if (span <= 0.0) return d;
    for (std::size_t i = 0; i < configs.size(); ++i)
        for (std::size_t j = 0; j < configs.size(); ++j) {
            int l1 = 0;
            for (std::size_t k = 0; k < positions[i].size(); ++k)
                l1 += std::abs(positions[i][k] - positions[j][k]);
            d(i, j) = l1 / span;
        }
    return d;
}

double mean_history_distance(const Matrix& distances, std::size_t config, std::size_t model,
                             const InterferenceState& interference) {
    const std::size_t n = interference.history_size(model);
    if (n == 0) return 0.0;
    double total = 0.0;
    interference.for_each(model, [&](std::size_t h) { total += distances(config, h); });
    return total / static_cast<double>(n);
}

double simulate_eval(const BenchmarkTable& table, const Matrix& distances, std::size_t config,
                     std::size_t model, const InterferenceState& interference,
                     const InterferenceParams& params, Rng& rng) {
    const double penalty =
        params.lambda * mean_history_distance(distances, config, model, interference);
    const double noisy = table.at(config).mean() - penalty + params.sigma * rng.normal();
    return std::clamp(noisy, 0.0, 1.0);
}

double mean_history_diversity(const Matrix& distances, const InterferenceState& interference) {
    double total = 0.0;
    int counted = 0;
    for (std::size_t m = 0; m < interference.num_models(); ++m) {
        const auto h = interference.history(m);
        if (h.size() < 2) continue;
        double sum = 0.0;
        for (std::size_t i = 0; i < h.size(); ++i)
            for (std::size_t j = i + 1; j < h.size(); ++j) sum += distances(h[i], h[j]);
        total += sum / (static_cast<double>(h.size()) * (h.size() - 1) / 2.0);
        ++counted;
    }
    return counted ? total / counted : 0.0;
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ValidationError("kendall_tau: length mismatch");
    if (a.size() < 2) throw ValidationError("kendall_tau: need at least two observations");
    const std::size_t n = a.size();
    std::int64_t concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double da = a[i] - a[j];
            const double db = b[i] - b[j];
            if (da == 0.0) ++ties_a;
            if (db == 0.0) ++ties_b;
            if (da == 0.0 || db == 0.0) continue;
            if ((da > 0.0) == (db > 0.0))
                ++concordant;
            else
                ++discordant;
        }
    }
    const auto pairs = static_cast<std::int64_t>(n * (n - 1) / 2);
    if (ties_a == pairs || ties_b == pairs)
        throw ValidationError("kendall_tau: undefined for an all-tied input");
    return static_cast<double>(concordant - discordant) /
           std::sqrt(static_cast<double>(pairs - ties_a) * static_cast<double>(pairs - ties_b));
}

SurrogateEvaluator::SurrogateEvaluator(const BenchmarkTable& table, std::size_t num_models,
                                       InterferenceParams params, std::size_t history_capacity,
                                       std::uint64_t seed, int validation_batches)
    : table_(table),
      params_(params),
      validation_params_{params.lambda,
                         params.sigma / std::sqrt(static_cast<double>(validation_batches))},
      interference_(num_models, history_capacity),
      noise_rng_(Rng::substream(seed, "noise")) {
    if (params.lambda < 0.0 || params.sigma < 0.0)
        throw ValidationError("interference strength and noise must be non-negative");
    if (validation_batches < 1) throw ValidationError("validation_batches must be positive");
    const auto configs = enumerate_configs(table.space());
    distances_ = position_distances(table.space(), configs);
}

StepOutcome SurrogateEvaluator::train_step(std::size_t config, std::size_t model) {
    if (config >= num_configs() || model >= num_models())
        throw EvaluationError("index out of range", config, model);
    interference_.register_training(model, config);
    return {simulate_eval(table_, distances_, config, model, interference_, params_, noise_rng_),
            std::nullopt};
}

double SurrogateEvaluator::validate(std::size_t config, std::size_t model) {
    if (config >= num_configs() || model >= num_models())
        throw EvaluationError("index out of range", config, model);
    return simulate_eval(table_, distances_, config, model, interference_, validation_params_,
                         noise_rng_);
}

}  // namespace poolnas
