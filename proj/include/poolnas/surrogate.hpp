#pragma once

#include "poolnas/evaluator.hpp"
#include "poolnas/matrix.hpp"
#include "poolnas/rng.hpp"
#include "poolnas/search_space.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace poolnas {

/// Ground-truth accuracy of every configuration of one search space.
/// Values are held in hundredths of a percent, the precision of the source
/// table, so that reading and writing are exact.
class BenchmarkTable {
public:
    struct Row {
        PoolingConfig config;
        int mean_centi_pct = 0;  ///< 90.52 % -> 9052
        int std_centi_pct = 0;

        double mean() const noexcept { return mean_centi_pct / 10000.0; }
        double std() const noexcept { return std_centi_pct / 10000.0; }
        double mean_percent() const noexcept { return mean_centi_pct / 100.0; }
        double std_percent() const noexcept { return std_centi_pct / 100.0; }
    };

    /// Rows must cover the space exactly; they are stored in enumeration order.
    BenchmarkTable(const SearchSpace& space, std::vector<Row> rows);

    const SearchSpace& space() const noexcept { return space_; }
    const std::vector<Row>& rows() const noexcept { return rows_; }
    std::size_t size() const noexcept { return rows_.size(); }
    const Row& at(std::size_t config) const { return rows_.at(config); }
    const Row& at(const PoolingConfig& config) const;

    std::vector<double> means() const;
    std::size_t best_config() const;

    /// One record per line: config, mean %, std % (two decimals), tab separated.
    std::string to_text() const;

private:
    SearchSpace space_;
    std::vector<Row> rows_;
};

/// Parses the table text format; lines starting with '#' are comments.
/// Missing, extra or duplicate configurations are reported together.
BenchmarkTable load_benchmark(std::string_view text, const SearchSpace& space);
BenchmarkTable load_benchmark_file(const std::filesystem::path& path, const SearchSpace& space);

/// ResNet20 / CIFAR-10 space: 10 blocks, 2 poolings, 32 px input.
SearchSpace resnet20_space();

/// Per-model ring buffers of recently trained configuration indices.
class InterferenceState {
public:
    InterferenceState(std::size_t num_models, std::size_t capacity);

    std::size_t num_models() const noexcept { return buffers_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }

    /// Oldest first.
    std::vector<std::size_t> history(std::size_t model) const;
    std::size_t history_size(std::size_t model) const;

    void register_training(std::size_t model, std::size_t config);

    template <typename F>
    void for_each(std::size_t model, F&& f) const {
        const Buffer& b = buffers_.at(model);
        for (std::size_t i = 0; i < b.size; ++i) f(b.items[(b.head + i) % capacity_]);
    }

private:
    struct Buffer {
        std::vector<std::size_t> items;
        std::size_t head = 0;
        std::size_t size = 0;
    };
    std::size_t capacity_;
    std::vector<Buffer> buffers_;
};

struct InterferenceParams {
    double lambda = 0.05;  ///< accuracy penalty at maximal normalised distance
    double sigma = 0.01;   ///< noise of one validation minibatch
};

/// Pairwise pooling-position L1 distance divided by p (L - 1 - fixed_prefix),
/// the span of each position times the number of positions.
Matrix position_distances(const SearchSpace& space, std::span<const PoolingConfig> configs);

/// clamp(N(mean(c) - lambda * dbar, sigma), 0, 1), dbar the mean normalised
/// distance between c and model m's history (0 when empty). Always consumes
/// one normal draw.
double simulate_eval(const BenchmarkTable& table, const Matrix& distances, std::size_t config,
                     std::size_t model, const InterferenceState& interference,
                     const InterferenceParams& params, Rng& rng);

/// Mean normalised distance between `config` and the model's history.
double mean_history_distance(const Matrix& distances, std::size_t config, std::size_t model,
                             const InterferenceState& interference);

/// Mean pairwise distance within each model's buffer, averaged over models
/// with at least two entries.
double mean_history_diversity(const Matrix& distances, const InterferenceState& interference);

/// Kendall tau-b with tie correction by exact pair counting. Throws
/// ValidationError for unequal or short input and when either side is
/// entirely tied.
double kendall_tau(std::span<const double> a, std::span<const double> b);

/// Surrogate backend: each training step registers (c, m) in the model's
/// history and returns a noisy interference-penalised minibatch accuracy.
/// Full validation averages `validation_batches` minibatches, so its noise is
/// sigma / sqrt(validation_batches).
class SurrogateEvaluator final : public Evaluator {
public:
    SurrogateEvaluator(const BenchmarkTable& table, std::size_t num_models,
                       InterferenceParams params, std::size_t history_capacity,
                       std::uint64_t seed, int validation_batches = 100);

    std::size_t num_configs() const override { return table_.size(); }
    std::size_t num_models() const override { return interference_.num_models(); }
    StepOutcome train_step(std::size_t config, std::size_t model) override;
    double validate(std::size_t config, std::size_t model) override;

    const InterferenceState& interference() const noexcept { return interference_; }
    const Matrix& distances() const noexcept { return distances_; }

private:
    const BenchmarkTable& table_;
    InterferenceParams params_;
    InterferenceParams validation_params_;
    InterferenceState interference_;
    Matrix distances_;
    Rng noise_rng_;
};

}  // namespace poolnas
