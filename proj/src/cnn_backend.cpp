#include "poolnas/cnn_backend.hpp"

#include "poolnas/error.hpp"

#include <algorithm>
#include <numeric>

namespace poolnas {

namespace {

std::vector<cnn::Batch<float>> contiguous_batches(const ImageSet& set, std::size_t batch,
                                                  std::size_t count) {
    std::vector<cnn::Batch<float>> out;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0, k = 0; start < set.size() && k < count; start += batch, ++k) {
        idx.resize(std::min(batch, set.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        ImageSet part = subset(set, idx);
        out.push_back({std::move(part.images), std::move(part.labels)});
    }
    return out;
}

}  // namespace

CnnEvaluator::CnnEvaluator(std::shared_ptr<const CnnData> data, CnnSettings settings,
                           std::size_t num_models, std::uint64_t seed)
    : data_(std::move(data)),
      settings_(settings),
      batch_rng_(Rng::substream(seed, "batch")) {
    if (!data_ || data_->plans.empty()) throw ValidationError("cnn evaluator needs network plans");
    if (num_models < 1) throw ValidationError("cnn evaluator needs at least one weight set");
    Rng init = Rng::substream(seed, "init");
    for (std::size_t m = 0; m < num_models; ++m)
        weights_.push_back(cnn::init_weights<float>(data_->plans.front(), static_cast<int>(m), init));
}

void CnnEvaluator::check(std::size_t config, std::size_t model) const {
    if (config >= num_configs() || model >= num_models())
        throw EvaluationError("configuration or model index out of range", config, model);
}

cnn::Batch<float> CnnEvaluator::draw(const ImageSet& set) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(settings_.batch_size));
    for (auto& i : idx) i = batch_rng_.uniform_index(set.size());
    ImageSet part = subset(set, idx);
    return {std::move(part.images), std::move(part.labels)};
}

StepOutcome CnnEvaluator::train_step(std::size_t config, std::size_t model) {
    check(config, model);
    const cnn::NetworkPlan& plan = data_->plans[config];
    cnn::WeightSet<float>& ws = weights_[model];
    try {
        const double lr = cnn::lr_at(std::min(step_, settings_.schedule_length),
                                     settings_.schedule_length, settings_.lr);
        const cnn::Batch<float> batch = draw(data_->split.train);
        StepOutcome out;
        out.loss = cnn::train_step(plan, ws, batch.images, std::span<const int>(batch.labels), lr,
                                   settings_.momentum, settings_.weight_decay);
        ++step_;
        const cnn::Batch<float> val = draw(data_->split.validation);
        const auto logits = cnn::forward(plan, ws, val.images, cnn::NormMode::batch_stats,
                                         static_cast<cnn::ForwardCache<float>*>(nullptr));
        out.accuracy = cnn::accuracy_from_logits(logits, std::span<const int>(val.labels));
        return out;
    } catch (const EvaluationError&) {
        throw;
    } catch (const std::exception& e) {
        throw EvaluationError(std::string("training ") + data_->configs[config].to_string() +
                                  " on model " + std::to_string(model) + ": " + e.what(),
                              config, model);
    }
}

double CnnEvaluator::validate(std::size_t config, std::size_t model) {
    check(config, model);
    const cnn::NetworkPlan& plan = data_->plans[config];
    cnn::WeightSet<float>& ws = weights_[model];
    const auto saved_mean = ws.running_mean;
    const auto saved_var = ws.running_var;
    try {
        // Cumulative average of batch statistics: momentum 1 / (k + 1) on batch k.
        const auto& recal = data_->recalibration_batches;
        for (std::size_t k = 0; k < recal.size(); ++k)
            cnn::forward(plan, ws, recal[k].images, cnn::NormMode::train,
                         static_cast<cnn::ForwardCache<float>*>(nullptr),
                         1.0 / static_cast<double>(k + 1));
        const double acc = cnn::evaluate(
            plan, ws, std::span<const cnn::Batch<float>>(data_->validation_batches));
        ws.running_mean = saved_mean;
        ws.running_var = saved_var;
        return acc;
    } catch (const std::exception& e) {
        ws.running_mean = saved_mean;
        ws.running_var = saved_var;
        throw EvaluationError(std::string("validating ") + data_->configs[config].to_string() +
                                  " on model " + std::to_string(model) + ": " + e.what(),
                              config, model);
    }
}

std::shared_ptr<const CnnData> prepare_cnn_data(const ExperimentConfig& cfg) {
    cfg.validate();
    ImageSet set;
    if (cfg.dataset.empty()) {
        set = synth_dataset(cfg.seed, cfg.samples_per_class, cfg.input_size, cfg.num_classes);
    } else {
        set = load_cifar_binary(cfg.dataset);
        if (cfg.input_size != 32)
            throw ValidationError("CIFAR images are 32 px; set input_size to 32");
    }
    auto data = std::make_shared<CnnData>();
    data->split = split_half(set, cfg.seed);
    const SearchSpace space = cfg.space();
    data->configs = enumerate_configs(space);
    const std::vector<int> channels =
        cfg.channels.empty() ? cnn::default_channel_schedule(space) : cfg.channels;
    for (const auto& c : data->configs)
        data->plans.push_back(cnn::build_network(space, c, channels, set.images.c,
                                                 set.num_classes, set.images.h));
    data->validation_batches = contiguous_batches(
        data->split.validation, static_cast<std::size_t>(cfg.eval_batch_size),
        data->split.validation.size());
    data->recalibration_batches =
        contiguous_batches(data->split.train, static_cast<std::size_t>(cfg.batch_size),
                           static_cast<std::size_t>(cfg.recalibration_batches));
    // A trailing slice too small for batch statistics is dropped.
    while (!data->recalibration_batches.empty() &&
           data->recalibration_batches.back().images.n < 2)
        data->recalibration_batches.pop_back();
    return data;
}

EvaluatorFactory make_cnn_factory(const ExperimentConfig& cfg) {
    std::shared_ptr<const CnnData> data = prepare_cnn_data(cfg);
    CnnSettings settings;
    settings.batch_size = cfg.batch_size;
    settings.lr = cfg.lr;
    settings.momentum = cfg.momentum;
    settings.weight_decay = cfg.weight_decay;
    const auto configs = static_cast<std::int64_t>(data->configs.size());
    settings.schedule_length = cfg.method == Method::bruteforce
                                   ? std::max<std::int64_t>(1, cfg.iterations / configs)
                                   : cfg.iterations;
    return [data, settings](std::size_t num_models,
                            std::uint64_t seed) -> std::unique_ptr<Evaluator> {
        return std::make_unique<CnnEvaluator>(data, settings, num_models, seed);
    };
}

}  // namespace poolnas
