#pragma once

#include "poolnas/cnn/network.hpp"
#include "poolnas/dataset.hpp"
#include "poolnas/evaluator.hpp"
#include "poolnas/experiment.hpp"
#include "poolnas/harness.hpp"

#include <memory>
#include <vector>

namespace poolnas {

/// Data and networks shared by every evaluator of one run.
struct CnnData {
    DataSplit split;
    std::vector<PoolingConfig> configs;
    std::vector<cnn::NetworkPlan> plans;  ///< one per configuration, same parameter layout
    std::vector<cnn::Batch<float>> validation_batches;
    std::vector<cnn::Batch<float>> recalibration_batches;  ///< fixed slices of the training split
};

struct CnnSettings {
    int batch_size = 16;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::int64_t schedule_length = 1;  ///< cosine period in training steps
};

/// M weight sets trained on sampled paths. Training batches and per-step
/// validation minibatches come from the "batch" substream; weights from "init".
/// `validate` re-estimates BN statistics for the queried configuration on the
/// recalibration batches, scores the whole validation split and restores the
/// statistics, so it leaves the weight set bit-identical.
class CnnEvaluator : public Evaluator {
public:
    CnnEvaluator(std::shared_ptr<const CnnData> data, CnnSettings settings,
                 std::size_t num_models, std::uint64_t seed);

    std::size_t num_configs() const override { return data_->plans.size(); }
    std::size_t num_models() const override { return weights_.size(); }
    StepOutcome train_step(std::size_t config, std::size_t model) override;
    double validate(std::size_t config, std::size_t model) override;

    const cnn::WeightSet<float>& weights(std::size_t model) const { return weights_.at(model); }
    std::int64_t steps_taken() const noexcept { return step_; }

private:
    cnn::Batch<float> draw(const ImageSet& set);
    void check(std::size_t config, std::size_t model) const;

    std::shared_ptr<const CnnData> data_;
    CnnSettings settings_;
    std::vector<cnn::WeightSet<float>> weights_;
    Rng batch_rng_;
    std::int64_t step_ = 0;
};

/// Loads or generates the dataset, splits it 50/50 and builds one plan per
/// configuration. Bruteforce runs anneal over iterations / C steps, other
/// methods over all iterations.
std::shared_ptr<const CnnData> prepare_cnn_data(const ExperimentConfig& config);

/// Factory for the CNN backend described by `config`; the dataset is loaded
/// (or generated) and split once, shared by every evaluator it builds.
EvaluatorFactory make_cnn_factory(const ExperimentConfig& config);

}  // namespace poolnas
