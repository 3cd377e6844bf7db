#pragma once

#include "poolnas/cnn/layers.hpp"
#include "poolnas/cnn/tensor.hpp"
#include "poolnas/rng.hpp"
#include "poolnas/search_space.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

// Residual network with movable max-pooling. Block 0 is the stem
// (conv3x3 -> BN -> ReLU); every later block is
// [conv3x3 -> BN -> ReLU -> conv3x3 -> BN] + skip, then ReLU.
// A pooling placed before block i max-pools the main path and average-pools
// the skip path. A 1x1 projection (no BN) joins blocks whose widths differ.
namespace poolnas::cnn {

/// Width of each block: `base_width` doubled at every stage boundary of the
/// most even split of the space (earlier stages take the remainder).
std::vector<int> default_channel_schedule(const SearchSpace& space, int base_width = 8);

/// Offsets into the flat parameter vector. Identical for every configuration
/// of a space, because the layout depends on block widths only.
struct BlockLayout {
    int in_channels = 0, out_channels = 0;
    std::size_t conv1 = 0, bn1_gamma = 0, bn1_beta = 0;
    std::size_t conv2 = 0, bn2_gamma = 0, bn2_beta = 0;  ///< unused for the stem
    std::size_t proj = 0;
    bool has_proj = false;
    std::size_t bn1_stats = 0, bn2_stats = 0;  ///< offsets into running statistics
};

struct NetworkPlan {
    PoolingConfig config;
    int input_channels = 3;
    int input_size = 32;
    int num_classes = 10;
    std::vector<int> channels;
    std::vector<bool> pool_before;  ///< per block
    std::vector<int> spatial;       ///< output side length per block
    std::vector<BlockLayout> blocks;
    std::size_t fc_weight = 0, fc_bias = 0;
    std::size_t num_params = 0;
    std::size_t num_stats = 0;  ///< BN channels, each with a running mean and variance
};

/// `input_size` 0 takes the space's input resolution. Throws ValidationError
/// for an invalid config, a schedule of the wrong length, or pooling that
/// would take the feature maps below 1 px or pool an odd side.
NetworkPlan build_network(const SearchSpace& space, const PoolingConfig& config,
                          const std::vector<int>& channels, int input_channels = 3,
                          int num_classes = 10, int input_size = 0);

std::size_t parameter_count(const NetworkPlan& plan);

/// Learnable parameters, their gradients, momentum buffers and BN running
/// statistics of one model. Storage is owned; copies are deep.
template <typename T>
struct WeightSet {
    int model = 0;
    std::vector<T> params, grads, velocity;
    std::vector<T> running_mean, running_var;

    /// FNV-1a over the bytes of every stored value.
    std::uint64_t fingerprint() const;
};

/// Kaiming-normal convolutions, BN gamma 1 and beta 0 (last BN of each
/// residual block: gamma 0), linear weights N(0, 1/fan_in), zero biases.
template <typename T>
WeightSet<T> init_weights(const NetworkPlan& plan, int model, Rng& rng);

/// train: batch statistics, running statistics updated.
/// batch_stats: batch statistics, running statistics untouched.
/// running: running statistics (evaluation).
enum class NormMode { train, batch_stats, running };

template <typename T>
struct BlockCache {
    Tensor<T> input;                     ///< block input before pooling
    Tensor<T> main_in, skip_in;          ///< after max-pool / avg-pool; empty without pooling
    std::vector<std::uint8_t> argmax;
    Tensor<T> a1;                        ///< input of the second convolution
    BatchNormCache<T> bn1, bn2;
    std::vector<std::uint8_t> mask1, mask_out;
};

template <typename T>
struct ForwardCache {
    NormMode mode = NormMode::train;
    std::vector<BlockCache<T>> blocks;
    Tensor<T> features;  ///< last block output
    Tensor<T> pooled;    ///< after global average pooling

    /// ReLU masks and max-pool indices; differing signatures mark a kink.
    std::vector<std::uint8_t> kink_signature() const;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr int kMinTrainBatch = 8;

/// Logits (n, num_classes, 1, 1). Throws NumericError naming the first layer
/// that produced a non-finite value. `cache` may be null when no backward
/// pass follows. `bn_momentum` applies in train mode only.
template <typename T>
Tensor<T> forward(const NetworkPlan& plan, WeightSet<T>& weights, const Tensor<T>& batch,
                  NormMode mode, ForwardCache<T>* cache, double bn_momentum = 0.1);

/// Accumulates parameter gradients into `weights.grads`; returns d loss / d input.
template <typename T>
Tensor<T> backward(const NetworkPlan& plan, WeightSet<T>& weights, const ForwardCache<T>& cache,
                   const Tensor<T>& dlogits);

/// v = momentum v + g + wd theta; theta -= lr v.
template <typename T>
void sgd_update(std::span<T> params, std::span<const T> grads, std::span<T> velocity, double lr,
                double momentum, double weight_decay);

/// One SGD step with momentum on mean cross-entropy. Weight decay is coupled:
/// v = momentum v + g + wd theta; theta -= lr v. Batches smaller than
/// kMinTrainBatch are rejected; a non-finite loss or gradient throws.
template <typename T>
double train_step(const NetworkPlan& plan, WeightSet<T>& weights, const Tensor<T>& batch,
                  std::span<const int> labels, double lr, double momentum, double weight_decay);

template <typename T>
struct Batch {
    Tensor<T> images;
    std::vector<int> labels;
};

/// Accuracy over every batch with running statistics. Throws on no batches.
template <typename T>
double evaluate(const NetworkPlan& plan, WeightSet<T>& weights, std::span<const Batch<T>> batches);

/// Cosine annealing: lr_init * 0.5 * (1 + cos(pi * step / total_steps)).
double lr_at(std::int64_t step, std::int64_t total_steps, double lr_init);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  ///< coordinates whose perturbation crossed a kink
};

/// Central differences on `coordinates` distinct entries of `theta` (all of
/// them when fewer). `loss` is evaluated with `theta` modified in place;
/// `analytic` holds the gradient at the unperturbed point. When `signature`
/// is set, a coordinate whose two perturbations give different signatures is
/// skipped. Relative error uses max(|analytic|, |numeric|, 1e-8).
GradCheckResult finite_difference_check(
    std::span<double> theta, std::span<const double> analytic,
    const std::function<double()>& loss,
    const std::function<std::vector<std::uint8_t>()>& signature, double epsilon,
    std::size_t coordinates, Rng& rng);

/// Whole-network check in 64-bit mode with batch statistics.
GradCheckResult gradient_check(const NetworkPlan& plan, WeightSet<double>& weights,
                               const Tensor<double>& batch, std::span<const int> labels,
                               double epsilon, std::size_t coordinates, std::uint64_t seed);

}  // namespace poolnas::cnn
