#pragma once

#include <cstddef>
#include <optional>

namespace poolnas {

struct StepOutcome {
    double accuracy = 0.0;        ///< validation-minibatch accuracy after the update
    std::optional<double> loss;   ///< training loss, when the backend trains for real
};

/// Backend shared by every searcher: trains and scores (configuration,
/// weight set) pairs identified by enumeration index and model index.
class Evaluator {
public:
    virtual ~Evaluator() = default;

    virtual std::size_t num_configs() const = 0;
    virtual std::size_t num_models() const = 0;

    /// One training minibatch on (config, model), then one validation minibatch.
    virtual StepOutcome train_step(std::size_t config, std::size_t model) = 0;

    /// Accuracy of (config, model) over the whole validation split.
    virtual double validate(std::size_t config, std::size_t model) = 0;
};

}  // namespace poolnas
