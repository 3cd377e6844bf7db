#include "poolnas/mixture.hpp"

#include "poolnas/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace poolnas {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "poolnas.mixture_state";

// exp() of anything below this underflows; keeps every joint entry positive.
constexpr double kMinExponent = -700.0;

void check_index(std::size_t value, std::size_t bound, const char* what) {
    if (value >= bound)
        throw ValidationError(std::string(what) + " index " + std::to_string(value) +
                              " out of range [0, " + std::to_string(bound) + ")");
}

}  // namespace

MixtureState::MixtureState(const MixtureParams& params)
    : beta_(params.beta),
      tau_init_(params.tau_init),
      tau_min_(params.tau_min > 0.0 ? params.tau_min
                                    : 1.0 / (100.0 * static_cast<double>(params.num_models))),
      total_steps_(params.total_steps),
      ema_acc_(params.num_configs, params.num_models, params.initial_accuracy),
      visits_(params.num_configs, params.num_models, 0) {
    if (params.num_configs < 1 || params.num_models < 1)
        throw ValidationError("mixture needs at least one configuration and one model");
    if (!(beta_ >= 0.0 && beta_ <= 1.0)) throw ValidationError("beta must lie in [0, 1]");
    if (!(tau_init_ > 0.0)) throw ValidationError("tau_init must be positive");
    if (tau_min_ > tau_init_) throw ValidationError("tau_min exceeds tau_init");
    if (total_steps_ < 1) throw ValidationError("total_steps must be positive");
    if (!(params.initial_accuracy >= 0.0 && params.initial_accuracy <= 1.0))
        throw ValidationError("initial_accuracy must lie in [0, 1]");
}

void MixtureState::update_accuracy(std::size_t config, std::size_t model, double accuracy) {
    check_index(config, num_configs(), "config");
    check_index(model, num_models(), "model");
    if (!(accuracy >= 0.0 && accuracy <= 1.0))
        throw ValidationError("accuracy " + std::to_string(accuracy) + " outside [0, 1]");
    double& a = ema_acc_(config, model);
    a = beta_ * a + (1.0 - beta_) * accuracy;
    ++visits_(config, model);
    ++step_;
}

nlohmann::json MixtureState::to_json(const std::string& space_fingerprint) const {
    nlohmann::json ema = nlohmann::json::array();
    nlohmann::json visits = nlohmann::json::array();
    for (std::size_t c = 0; c < num_configs(); ++c) {
        ema.push_back(std::vector<double>(ema_acc_.row(c).begin(), ema_acc_.row(c).end()));
        visits.push_back(
            std::vector<std::int64_t>(visits_.row(c).begin(), visits_.row(c).end()));
    }
    return {
        {"format", kCheckpointFormat},
        {"version", kCheckpointVersion},
        {"space", space_fingerprint},
        {"num_configs", num_configs()},
        {"num_models", num_models()},
        {"beta", beta_},
        {"tau_init", tau_init_},
        {"tau_min", tau_min_},
        {"total_steps", total_steps_},
        {"step", step_},
        {"ema_acc", std::move(ema)},
        {"visit_counts", std::move(visits)},
    };
}

MixtureState MixtureState::from_json(const nlohmann::json& doc,
                                     const std::string& expected_fingerprint) {
    if (doc.value("format", "") != kCheckpointFormat)
        throw ValidationError("not a mixture-state checkpoint");
    if (doc.at("version").get<int>() != kCheckpointVersion)
        throw ValidationError("unsupported checkpoint version " + doc.at("version").dump());
    if (doc.at("space").get<std::string>() != expected_fingerprint)
        throw ValidationError("checkpoint search space '" + doc.at("space").get<std::string>() +
                              "' does not match '" + expected_fingerprint + "'");

    MixtureState s;
    const auto C = doc.at("num_configs").get<std::size_t>();
    const auto M = doc.at("num_models").get<std::size_t>();
    s.beta_ = doc.at("beta").get<double>();
    s.tau_init_ = doc.at("tau_init").get<double>();
    s.tau_min_ = doc.at("tau_min").get<double>();
    s.total_steps_ = doc.at("total_steps").get<std::int64_t>();
    s.step_ = doc.at("step").get<std::int64_t>();
    s.ema_acc_ = Matrix(C, M);
    s.visits_ = Grid<std::int64_t>(C, M);
    const auto& ema = doc.at("ema_acc");
    const auto& visits = doc.at("visit_counts");
    if (ema.size() != C || visits.size() != C)
        throw ValidationError("checkpoint matrices do not have num_configs rows");
    std::int64_t visit_sum = 0;
    for (std::size_t c = 0; c < C; ++c) {
        if (ema[c].size() != M || visits[c].size() != M)
            throw ValidationError("checkpoint matrices do not have num_models columns");
        for (std::size_t m = 0; m < M; ++m) {
            s.ema_acc_(c, m) = ema[c][m].get<double>();
            s.visits_(c, m) = visits[c][m].get<std::int64_t>();
            if (s.visits_(c, m) < 0) throw ValidationError("negative visit count");
            visit_sum += s.visits_(c, m);
        }
    }
    if (visit_sum != s.step_) throw ValidationError("visit counts do not sum to step");
    return s;
}

std::vector<double> JointDistribution::config_marginal() const {
    std::vector<double> out(probs.rows(), 0.0);
    for (std::size_t c = 0; c < probs.rows(); ++c)
        for (double v : probs.row(c)) out[c] += v;
    return out;
}

std::vector<double> JointDistribution::model_marginal() const {
    std::vector<double> out(probs.cols(), 0.0);
    for (std::size_t c = 0; c < probs.rows(); ++c)
        for (std::size_t m = 0; m < probs.cols(); ++m) out[m] += probs(c, m);
    return out;
}

JointDistribution joint_from_accuracies(const Matrix& ema_acc, double tau) {
    if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
    const auto& values = ema_acc.values();
    if (values.empty()) throw ValidationError("empty accuracy matrix");
    for (double v : values)
        if (!std::isfinite(v)) throw ValidationError("accuracy matrix is not finite");

    const double top = *std::max_element(values.begin(), values.end());
    JointDistribution joint{Matrix(ema_acc.rows(), ema_acc.cols())};
    auto& out = joint.probs.values();
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = std::exp(std::max((values[i] - top) / tau, kMinExponent));
        total += out[i];
    }
    for (double& v : out) v /= total;
    return joint;
}

JointDistribution row_stable_joint(const Matrix& ema_acc, double tau) {
    if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
    if (ema_acc.values().empty()) throw ValidationError("empty accuracy matrix");
    const double row_mass = 1.0 / static_cast<double>(ema_acc.rows());
    JointDistribution joint{Matrix(ema_acc.rows(), ema_acc.cols())};
    for (std::size_t c = 0; c < ema_acc.rows(); ++c) {
        auto in = ema_acc.row(c);
        for (double v : in)
            if (!std::isfinite(v)) throw ValidationError("accuracy matrix is not finite");
        const double top = *std::max_element(in.begin(), in.end());
        auto out = joint.probs.row(c);
        double total = 0.0;
        for (std::size_t m = 0; m < in.size(); ++m) {
            out[m] = std::exp(std::max((in[m] - top) / tau, kMinExponent));
            total += out[m];
        }
        for (double& v : out) v *= row_mass / total;
    }
    return joint;
}

double kl_to_uniform(std::span<const double> p) {
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    const double n = static_cast<double>(p.size());
    // Sum of q log(n q) - (q - 1/n): the subtracted terms add up to zero, and
    // each summand is non-negative, so tiny divergences do not cancel away.
    double kl = 0.0;
    for (double v : p) {
        const double q = v / total;
        const double x = n * q - 1.0;
        kl += (q > 0.0 ? q * std::log1p(x) : 0.0) - x / n;
    }
    return std::max(kl, 0.0);
}

JointDistribution balance_ipf(const JointDistribution& joint, double delta, int max_iters,
                              IpfStats* stats) {
    for (double v : joint.probs.values())
        if (!(v > 0.0) || !std::isfinite(v))
            throw ValidationError("IPF needs a strictly positive finite matrix");

    const std::size_t C = joint.probs.rows();
    const std::size_t M = joint.probs.cols();
    const double row_target = 1.0 / static_cast<double>(C);
    const double col_target = 1.0 / static_cast<double>(M);

    JointDistribution out = joint;
    Matrix& p = out.probs;
    std::vector<double> col_sum(M);
    double kl = kl_to_uniform(out.model_marginal());
    int iter = 0;
    while (true) {
        if (iter >= max_iters)
            throw ConvergenceError("IPF did not converge in " + std::to_string(max_iters) +
                                       " iterations (KL " + std::to_string(kl) + ")",
                                   kl);
        ++iter;

        std::fill(col_sum.begin(), col_sum.end(), 0.0);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t m = 0; m < M; ++m) col_sum[m] += p(c, m);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t m = 0; m < M; ++m) p(c, m) *= col_target / col_sum[m];

        for (std::size_t c = 0; c < C; ++c) {
            auto row = p.row(c);
            const double sum = std::accumulate(row.begin(), row.end(), 0.0);
            for (double& v : row) v *= row_target / sum;
        }

        kl = kl_to_uniform(out.model_marginal());
        if (kl < delta) break;
    }

    const double total = std::accumulate(p.values().begin(), p.values().end(), 0.0);
    for (double& v : p.values()) v /= total;
    if (stats) *stats = {iter, kl};
    return out;
}

std::vector<double> conditional_model_dist(const JointDistribution& joint, std::size_t config) {
    check_index(config, joint.probs.rows(), "config");
    auto row = joint.probs.row(config);
    const double sum = std::accumulate(row.begin(), row.end(), 0.0);
    std::vector<double> out(row.begin(), row.end());
    for (double& v : out) v /= sum;
    return out;
}

double mean_conditional_entropy(const JointDistribution& joint) {
    double total = 0.0;
    for (std::size_t c = 0; c < joint.probs.rows(); ++c) {
        for (double q : conditional_model_dist(joint, c))
            if (q > 0.0) total -= q * std::log(q);
    }
    return total / static_cast<double>(joint.probs.rows());
}

std::pair<std::size_t, std::size_t> sample_pair(const JointDistribution& joint, Rng& config_rng,
                                                Rng& model_rng) {
    const auto c = static_cast<std::size_t>(config_rng.uniform_index(joint.probs.rows()));
    const std::size_t m = model_rng.categorical(joint.probs.row(c));
    return {c, m};
}

double temperature_at(const MixtureState& state, std::int64_t step) {
    if (step < 0) throw ValidationError("negative step");
    if (step >= state.total_steps()) return state.tau_min();
    const double frac = static_cast<double>(step) / static_cast<double>(state.total_steps());
    return state.tau_init() + (state.tau_min() - state.tau_init()) * frac;
}

std::size_t argmax(std::span<const double> values) {
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                    values.begin());
}

std::vector<Candidate> select_candidates(const MixtureState& state, const JointDistribution& joint,
                                         std::size_t k, SelectionMode mode, Evaluator* evaluator) {
    const std::size_t C = state.num_configs();
    if (joint.probs.rows() != C || joint.probs.cols() != state.num_models())
        throw ValidationError("joint distribution shape does not match the mixture state");
    if (k > C) throw ValidationError("k exceeds the number of configurations");
    if (mode == SelectionMode::full && evaluator == nullptr)
        throw ValidationError("full selection needs an evaluator");

    std::vector<Candidate> ranked;
    ranked.reserve(C);
    for (std::size_t c = 0; c < C; ++c) {
        // Row c of p(c, m) has the same argmax as p(m | c).
        const std::size_t m = argmax(joint.probs.row(c));
        double score = 0.0;
        if (mode == SelectionMode::proxy) {
            score = state.ema_acc()(c, m);
        } else {
            try {
                score = evaluator->validate(c, m);
            } catch (const EvaluationError&) {
                throw;
            } catch (const std::exception& e) {
                throw EvaluationError(std::string("evaluating config ") + std::to_string(c) +
                                          " on model " + std::to_string(m) + ": " + e.what(),
                                      c, m);
            }
        }
        ranked.push_back({c, m, score});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const Candidate& a, const Candidate& b) {
        return a.score > b.score;
    });
    ranked.resize(k);
    return ranked;
}

}  // namespace poolnas
