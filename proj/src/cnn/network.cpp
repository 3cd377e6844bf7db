#include "poolnas/cnn/network.hpp"

#include "poolnas/error.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>

namespace poolnas::cnn {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
}

std::string layer_name(std::size_t block, const char* layer) {
    return "block " + std::to_string(block) + " " + layer;
}

template <typename T>
std::span<const T> slice(const std::vector<T>& v, std::size_t offset, std::size_t len) {
    return std::span<const T>(v.data() + offset, len);
}

template <typename T>
std::span<T> slice(std::vector<T>& v, std::size_t offset, std::size_t len) {
    return std::span<T>(v.data() + offset, len);
}

std::size_t conv_size(int out, int in, int k) {
    return static_cast<std::size_t>(out) * in * k * k;
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& other) {
    require(acc.same_shape(other), "cannot add tensors of shapes " + acc.shape_string() +
                                       " and " + other.shape_string());
    for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += other.data[i];
}

template <typename T>
void normalize(NormMode mode, const Tensor<T>& x, WeightSet<T>& w, std::size_t gamma,
               std::size_t beta, std::size_t stats, int channels, BatchNormCache<T>& cache,
               Tensor<T>& y, T momentum) {
    const auto& params = w.params;
    const auto g = slice(params, gamma, channels);
    const auto b = slice(params, beta, channels);
    const T eps = static_cast<T>(kBatchNormEps);
    switch (mode) {
        case NormMode::running:
            batchnorm_forward_eval(x, g, b, slice(std::as_const(w.running_mean), stats, channels),
                                   slice(std::as_const(w.running_var), stats, channels), eps, y);
            break;
        case NormMode::train:
            batchnorm_forward_train(x, g, b, eps, cache, y,
                                    slice(w.running_mean, stats, channels),
                                    slice(w.running_var, stats, channels), momentum);
            break;
        case NormMode::batch_stats:
            batchnorm_forward_train(x, g, b, eps, cache, y);
            break;
    }
}

}  // namespace

std::vector<int> default_channel_schedule(const SearchSpace& space, int base_width) {
    require(base_width >= 1, "base width must be positive");
    const int blocks = space.total_blocks();
    const int stages = space.num_poolings() + 1;
    require(stages < 31 && base_width <= (INT_MAX >> (stages - 1)),
            "channel schedule overflows int");
    std::vector<int> channels;
    for (int s = 0; s < stages; ++s) {
        const int count = blocks / stages + (s < blocks % stages ? 1 : 0);
        channels.insert(channels.end(), count, base_width << s);
    }
    return channels;
}

NetworkPlan build_network(const SearchSpace& space, const PoolingConfig& config,
                          const std::vector<int>& channels, int input_channels, int num_classes,
                          int input_size) {
    const auto problems = validate_config(config, space);
    require(problems.empty(),
            "invalid config " + config.to_string() + ": " +
                (problems.empty() ? std::string() : problems.front()));
    const int blocks = space.total_blocks();
    require(channels.size() == static_cast<std::size_t>(blocks),
            "channel schedule has " + std::to_string(channels.size()) + " entries for " +
                std::to_string(blocks) + " blocks");
    require(std::all_of(channels.begin(), channels.end(), [](int c) { return c >= 1; }),
            "channel counts must be positive");
    require(input_channels >= 1, "input channels must be positive");
    require(num_classes >= 2, "need at least two classes");

    NetworkPlan plan;
    plan.config = config;
    plan.input_channels = input_channels;
    plan.num_classes = num_classes;
    plan.input_size = input_size > 0 ? input_size : space.input_size();
    plan.channels = channels;
    plan.pool_before.assign(blocks, false);
    for (int pos : config_to_positions(config)) plan.pool_before[pos] = true;

    int side = plan.input_size;
    for (int i = 0; i < blocks; ++i) {
        if (plan.pool_before[i]) {
            require(side >= 2, "pooling before block " + std::to_string(i) +
                                   " would take the feature maps below 1 px");
            require(side % 2 == 0, "pooling before block " + std::to_string(i) +
                                       " needs an even side, got " + std::to_string(side));
            side /= 2;
        }
        plan.spatial.push_back(side);
    }

    std::size_t offset = 0, stats = 0;
    for (int i = 0; i < blocks; ++i) {
        BlockLayout b;
        b.in_channels = i == 0 ? input_channels : channels[i - 1];
        b.out_channels = channels[i];
        const int out = b.out_channels, in = b.in_channels;
        b.conv1 = offset;
        offset += conv_size(out, in, 3);
        b.bn1_gamma = offset;
        b.bn1_beta = offset + out;
        offset += 2 * static_cast<std::size_t>(out);
        b.bn1_stats = stats;
        stats += out;
        if (i > 0) {
            b.conv2 = offset;
            offset += conv_size(out, out, 3);
            b.bn2_gamma = offset;
            b.bn2_beta = offset + out;
            offset += 2 * static_cast<std::size_t>(out);
            b.bn2_stats = stats;
            stats += out;
            if (in != out) {
                b.has_proj = true;
                b.proj = offset;
                offset += conv_size(out, in, 1);
            }
        }
        plan.blocks.push_back(b);
    }
    plan.fc_weight = offset;
    offset += static_cast<std::size_t>(num_classes) * channels.back();
    plan.fc_bias = offset;
    offset += num_classes;
    plan.num_params = offset;
    plan.num_stats = stats;
    return plan;
}

std::size_t parameter_count(const NetworkPlan& plan) { return plan.num_params; }

template <typename T>
std::uint64_t WeightSet<T>::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](const void* data, std::size_t bytes) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < bytes; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    mix(&model, sizeof model);
    for (const auto* v : {&params, &grads, &velocity, &running_mean, &running_var}) {
        const std::uint64_t n = v->size();
        mix(&n, sizeof n);
        mix(v->data(), v->size() * sizeof(T));
    }
    return h;
}

template <typename T>
WeightSet<T> init_weights(const NetworkPlan& plan, int model, Rng& rng) {
    WeightSet<T> ws;
    ws.model = model;
    ws.params.assign(plan.num_params, T(0));
    ws.grads.assign(plan.num_params, T(0));
    ws.velocity.assign(plan.num_params, T(0));
    ws.running_mean.assign(plan.num_stats, T(0));
    ws.running_var.assign(plan.num_stats, T(1));
    auto gaussian = [&](std::size_t offset, std::size_t len, double stddev) {
        for (std::size_t i = 0; i < len; ++i)
            ws.params[offset + i] = static_cast<T>(stddev * rng.normal());
    };
    auto fill = [&](std::size_t offset, std::size_t len, T value) {
        std::fill_n(ws.params.begin() + static_cast<std::ptrdiff_t>(offset), len, value);
    };
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
        const BlockLayout& b = plan.blocks[i];
        const int out = b.out_channels, in = b.in_channels;
        gaussian(b.conv1, conv_size(out, in, 3), std::sqrt(2.0 / (in * 9)));
        fill(b.bn1_gamma, out, T(1));
        if (i == 0) continue;
        gaussian(b.conv2, conv_size(out, out, 3), std::sqrt(2.0 / (out * 9)));
        fill(b.bn2_gamma, out, T(0));
        if (b.has_proj) gaussian(b.proj, conv_size(out, in, 1), std::sqrt(2.0 / in));
    }
    const int features = plan.channels.back();
    gaussian(plan.fc_weight, static_cast<std::size_t>(plan.num_classes) * features,
             1.0 / std::sqrt(static_cast<double>(features)));
    return ws;
}

template <typename T>
std::vector<std::uint8_t> ForwardCache<T>::kink_signature() const {
    std::vector<std::uint8_t> sig;
    for (const auto& b : blocks) {
        sig.insert(sig.end(), b.mask1.begin(), b.mask1.end());
        sig.insert(sig.end(), b.mask_out.begin(), b.mask_out.end());
        sig.insert(sig.end(), b.argmax.begin(), b.argmax.end());
    }
    return sig;
}

template <typename T>
Tensor<T> forward(const NetworkPlan& plan, WeightSet<T>& weights, const Tensor<T>& batch,
                  NormMode mode, ForwardCache<T>* cache, double bn_momentum) {
    require(batch.c == plan.input_channels && batch.h == plan.input_size &&
                batch.w == plan.input_size,
            "batch shape " + batch.shape_string() + " does not match the network input");
    require(weights.params.size() == plan.num_params &&
                weights.running_mean.size() == plan.num_stats,
            "weight set does not match the network plan");
    ForwardCache<T> local;
    ForwardCache<T>& fc = cache ? *cache : local;
    fc.mode = mode;
    fc.blocks.assign(plan.blocks.size(), BlockCache<T>{});

    const auto& p = weights.params;
    const T bn_m = static_cast<T>(bn_momentum);
    Tensor<T> x = batch;
    for (std::size_t i = 0; i < plan.blocks.size(); ++i) {
        const BlockLayout& b = plan.blocks[i];
        BlockCache<T>& bc = fc.blocks[i];
        const int out = b.out_channels, in = b.in_channels;
        bc.input = std::move(x);
        Tensor<T> t, u;
        if (i == 0) {
            conv_forward(bc.input, slice(p, b.conv1, conv_size(out, in, 3)), out, 3, t);
            check_finite(t, layer_name(i, "conv1"));
            normalize(mode, t, weights, b.bn1_gamma, b.bn1_beta, b.bn1_stats, out, bc.bn1, u,
                      bn_m);
            check_finite(u, layer_name(i, "bn1"));
            relu_forward(u, x, bc.mask1);
            continue;
        }
        if (plan.pool_before[i]) {
            maxpool_forward(bc.input, bc.main_in, bc.argmax);
            avgpool_forward(bc.input, bc.skip_in);
        }
        const Tensor<T>& main_src = plan.pool_before[i] ? bc.main_in : bc.input;
        const Tensor<T>& skip_src = plan.pool_before[i] ? bc.skip_in : bc.input;

        conv_forward(main_src, slice(p, b.conv1, conv_size(out, in, 3)), out, 3, t);
        check_finite(t, layer_name(i, "conv1"));
        normalize(mode, t, weights, b.bn1_gamma, b.bn1_beta, b.bn1_stats, out, bc.bn1, u,
                  bn_m);
        check_finite(u, layer_name(i, "bn1"));
        relu_forward(u, bc.a1, bc.mask1);
        conv_forward(bc.a1, slice(p, b.conv2, conv_size(out, out, 3)), out, 3, t);
        check_finite(t, layer_name(i, "conv2"));
        normalize(mode, t, weights, b.bn2_gamma, b.bn2_beta, b.bn2_stats, out, bc.bn2, u,
                  bn_m);
        check_finite(u, layer_name(i, "bn2"));
        if (b.has_proj) {
            conv_forward(skip_src, slice(p, b.proj, conv_size(out, in, 1)), out, 1, t);
            check_finite(t, layer_name(i, "projection"));
            add_into(u, t);
        } else {
            add_into(u, skip_src);
        }
        relu_forward(u, x, bc.mask_out);
    }
    fc.features = std::move(x);
    global_avgpool_forward(fc.features, fc.pooled);
    Tensor<T> logits;
    const int features = plan.channels.back();
    linear_forward(fc.pooled,
                   slice(p, plan.fc_weight, static_cast<std::size_t>(plan.num_classes) * features),
                   slice(p, plan.fc_bias, plan.num_classes), plan.num_classes, logits);
    check_finite(logits, "classifier");
    return logits;
}

template <typename T>
Tensor<T> backward(const NetworkPlan& plan, WeightSet<T>& weights, const ForwardCache<T>& cache,
                   const Tensor<T>& dlogits) {
    require(cache.mode != NormMode::running, "backward pass needs batch statistics");
    require(cache.blocks.size() == plan.blocks.size(), "forward cache does not match plan");
    const auto& p = weights.params;
    auto& g = weights.grads;
    const int features = plan.channels.back();
    const std::size_t fc_len = static_cast<std::size_t>(plan.num_classes) * features;

    Tensor<T> dpooled, dx;
    linear_backward(cache.pooled, slice(p, plan.fc_weight, fc_len), dlogits,
                    slice(g, plan.fc_weight, fc_len), slice(g, plan.fc_bias, plan.num_classes),
                    &dpooled);
    global_avgpool_backward(dpooled, cache.features.h, cache.features.w, dx);

    for (std::size_t i = plan.blocks.size(); i-- > 1;) {
        const BlockLayout& b = plan.blocks[i];
        const BlockCache<T>& bc = cache.blocks[i];
        const int out = b.out_channels, in = b.in_channels;
        const bool pooled = plan.pool_before[i];
        const Tensor<T>& main_src = pooled ? bc.main_in : bc.input;
        const Tensor<T>& skip_src = pooled ? bc.skip_in : bc.input;

        Tensor<T> dpre, t, u, dmain, dskip;
        relu_backward(bc.mask_out, dx, dpre);
        batchnorm_backward(bc.bn2, slice(p, b.bn2_gamma, out), dpre, slice(g, b.bn2_gamma, out),
                           slice(g, b.bn2_beta, out), t);
        conv_backward(bc.a1, slice(p, b.conv2, conv_size(out, out, 3)), out, 3, t,
                      slice(g, b.conv2, conv_size(out, out, 3)), &u);
        relu_backward(bc.mask1, u, t);
        batchnorm_backward(bc.bn1, slice(p, b.bn1_gamma, out), t, slice(g, b.bn1_gamma, out),
                           slice(g, b.bn1_beta, out), u);
        conv_backward(main_src, slice(p, b.conv1, conv_size(out, in, 3)), out, 3, u,
                      slice(g, b.conv1, conv_size(out, in, 3)), &dmain);
        if (b.has_proj)
            conv_backward(skip_src, slice(p, b.proj, conv_size(out, in, 1)), out, 1, dpre,
                          slice(g, b.proj, conv_size(out, in, 1)), &dskip);
        else
            dskip = std::move(dpre);
        if (pooled) {
            maxpool_backward(bc.argmax, dmain, dx);
            avgpool_backward(dskip, t);
            add_into(dx, t);
        } else {
            dx = std::move(dmain);
            add_into(dx, dskip);
        }
    }

    const BlockLayout& b = plan.blocks[0];
    const BlockCache<T>& bc = cache.blocks[0];
    const int out = b.out_channels, in = b.in_channels;
    Tensor<T> t, u, dinput;
    relu_backward(bc.mask1, dx, t);
    batchnorm_backward(bc.bn1, slice(p, b.bn1_gamma, out), t, slice(g, b.bn1_gamma, out),
                       slice(g, b.bn1_beta, out), u);
    conv_backward(bc.input, slice(p, b.conv1, conv_size(out, in, 3)), out, 3, u,
                  slice(g, b.conv1, conv_size(out, in, 3)), &dinput);
    return dinput;
}

template <typename T>
double train_step(const NetworkPlan& plan, WeightSet<T>& weights, const Tensor<T>& batch,
                  std::span<const int> labels, double lr, double momentum, double weight_decay) {
    require(batch.n >= kMinTrainBatch, "training batches need at least " +
                                           std::to_string(kMinTrainBatch) + " samples");
    std::fill(weights.grads.begin(), weights.grads.end(), T(0));
    ForwardCache<T> cache;
    const Tensor<T> logits = forward(plan, weights, batch, NormMode::train, &cache);
    Tensor<T> dlogits;
    const T loss = softmax_cross_entropy(logits, labels, dlogits);
    if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
    backward(plan, weights, cache, dlogits);
    for (T v : weights.grads)
        if (!std::isfinite(v)) throw NumericError("non-finite gradient");
    sgd_update(std::span<T>(weights.params), std::span<const T>(weights.grads),
               std::span<T>(weights.velocity), lr, momentum, weight_decay);
    return static_cast<double>(loss);
}

template <typename T>
void sgd_update(std::span<T> params, std::span<const T> grads, std::span<T> velocity, double lr,
                double momentum, double weight_decay) {
    require(grads.size() == params.size() && velocity.size() == params.size(),
            "optimizer buffers do not match parameters");
    const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay),
            step = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        T& v = velocity[i];
        v = mu * v + grads[i] + wd * params[i];
        params[i] -= step * v;
    }
}

template <typename T>
double evaluate(const NetworkPlan& plan, WeightSet<T>& weights, std::span<const Batch<T>> batches) {
    require(!batches.empty(), "evaluation needs at least one batch");
    long correct = 0, total = 0;
    for (const Batch<T>& b : batches) {
        const Tensor<T> logits = forward(plan, weights, b.images, NormMode::running,
                                         static_cast<ForwardCache<T>*>(nullptr));
        correct += std::lround(accuracy_from_logits(logits, std::span<const int>(b.labels)) *
                               b.images.n);
        total += b.images.n;
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

double lr_at(std::int64_t step, std::int64_t total_steps, double lr_init) {
    require(total_steps > 0 && step >= 0 && step <= total_steps,
            "learning-rate step must lie in [0, total_steps]");
    if (step == total_steps) return 0.0;
    return lr_init * 0.5 *
           (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                           static_cast<double>(total_steps)));
}

GradCheckResult finite_difference_check(
    std::span<double> theta, std::span<const double> analytic,
    const std::function<double()>& loss,
    const std::function<std::vector<std::uint8_t>()>& signature, double epsilon,
    std::size_t coordinates, Rng& rng) {
    require(analytic.size() == theta.size(), "analytic gradient size mismatch");
    std::vector<std::size_t> order(theta.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t count = std::min(coordinates, order.size());
    for (std::size_t i = 0; i < count; ++i)
        std::swap(order[i], order[i + rng.uniform_index(order.size() - i)]);
    order.resize(count);

    GradCheckResult result;
    loss();
    const auto base = signature ? signature() : std::vector<std::uint8_t>{};
    for (std::size_t idx : order) {
        const double saved = theta[idx];
        theta[idx] = saved + epsilon;
        const double plus = loss();
        const bool kink_plus = signature && signature() != base;
        theta[idx] = saved - epsilon;
        const double minus = loss();
        const bool kink_minus = signature && signature() != base;
        theta[idx] = saved;
        if (kink_plus || kink_minus) {
            ++result.skipped;
            continue;
        }
        const double numeric = (plus - minus) / (2.0 * epsilon);
        const double denom = std::max({std::abs(analytic[idx]), std::abs(numeric), 1e-8});
        result.max_rel_error =
            std::max(result.max_rel_error, std::abs(analytic[idx] - numeric) / denom);
        ++result.checked;
    }
    return result;
}

GradCheckResult gradient_check(const NetworkPlan& plan, WeightSet<double>& weights,
                               const Tensor<double>& batch, std::span<const int> labels,
                               double epsilon, std::size_t coordinates, std::uint64_t seed) {
    ForwardCache<double> cache;
    Tensor<double> dlogits;
    auto loss = [&] {
        const auto logits = forward(plan, weights, batch, NormMode::batch_stats, &cache);
        return softmax_cross_entropy(logits, labels, dlogits);
    };
    std::fill(weights.grads.begin(), weights.grads.end(), 0.0);
    loss();
    backward(plan, weights, cache, dlogits);
    const std::vector<double> analytic = weights.grads;
    Rng rng(seed);
    return finite_difference_check(weights.params, analytic, loss,
                                   [&] { return cache.kink_signature(); }, epsilon, coordinates,
                                   rng);
}

#define POOLNAS_INSTANTIATE(T)                                                                    \
    template struct WeightSet<T>;                                                                 \
    template struct ForwardCache<T>;                                                              \
    template WeightSet<T> init_weights<T>(const NetworkPlan&, int, Rng&);                         \
    template Tensor<T> forward<T>(const NetworkPlan&, WeightSet<T>&, const Tensor<T>&, NormMode, \
                                  ForwardCache<T>*, double);                                      \
    template void sgd_update<T>(std::span<T>, std::span<const T>, std::span<T>, double, double,   \
                                double);                                                          \
    template Tensor<T> backward<T>(const NetworkPlan&, WeightSet<T>&, const ForwardCache<T>&,     \
                                   const Tensor<T>&);                                             \
    template double train_step<T>(const NetworkPlan&, WeightSet<T>&, const Tensor<T>&,            \
                                  std::span<const int>, double, double, double);                  \
    template double evaluate<T>(const NetworkPlan&, WeightSet<T>&, std::span<const Batch<T>>);

POOLNAS_INSTANTIATE(float)
POOLNAS_INSTANTIATE(double)

#undef POOLNAS_INSTANTIATE

}  // namespace poolnas::cnn
