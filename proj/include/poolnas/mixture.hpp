#pragma once

#include "poolnas/evaluator.hpp"
#include "poolnas/matrix.hpp"
#include "poolnas/rng.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace poolnas {

struct MixtureParams {
    std::size_t num_configs = 1;
    std::size_t num_models = 1;
    double beta = 0.9;                 ///< EMA smoothing in [0, 1]; 1 freezes a(c, m)
    std::int64_t total_steps = 1;      ///< temperature schedule horizon
    double tau_init = 1.0;
    double tau_min = 0.0;              ///< <= 0 selects 1 / (100 M)
    double initial_accuracy = 0.5;
};

/// Accuracy bookkeeping of the balanced mixture: EMA accuracy a(c, m) per
/// configuration and weight set, visit counts, and the temperature schedule.
class MixtureState {
public:
    explicit MixtureState(const MixtureParams& params);

    std::size_t num_configs() const noexcept { return ema_acc_.rows(); }
    std::size_t num_models() const noexcept { return ema_acc_.cols(); }
    double beta() const noexcept { return beta_; }
    double tau_init() const noexcept { return tau_init_; }
    double tau_min() const noexcept { return tau_min_; }
    std::int64_t total_steps() const noexcept { return total_steps_; }
    std::int64_t step() const noexcept { return step_; }
    const Matrix& ema_acc() const noexcept { return ema_acc_; }
    const Grid<std::int64_t>& visit_counts() const noexcept { return visits_; }

    /// a(c, m) <- beta a(c, m) + (1 - beta) acc; counts the visit and the step.
    void update_accuracy(std::size_t config, std::size_t model, double accuracy);

    /// Versioned checkpoint; `space_fingerprint` guards against resuming on another space.
    nlohmann::json to_json(const std::string& space_fingerprint) const;
    static MixtureState from_json(const nlohmann::json& doc,
                                  const std::string& expected_fingerprint);

    friend bool operator==(const MixtureState&, const MixtureState&) = default;

private:
    MixtureState() = default;

    double beta_ = 0.9;
    double tau_init_ = 1.0;
    double tau_min_ = 0.01;
    std::int64_t total_steps_ = 1;
    std::int64_t step_ = 0;
    Matrix ema_acc_;
    Grid<std::int64_t> visits_;
};

/// Joint p(c, m) over configurations (rows) and weight sets (columns).
struct JointDistribution {
    Matrix probs;

    std::vector<double> config_marginal() const;
    std::vector<double> model_marginal() const;
};

/// p(c, m) proportional to exp(a(c, m) / tau), max-subtracted before exponentiation.
JointDistribution joint_from_accuracies(const Matrix& ema_acc, double tau);

/// (1/C) softmax over m of a(c, m) / tau, stabilised per row. Differs from
/// joint_from_accuracies only by a per-row factor, so both balance to the same
/// matrix, but no row underflows as a whole at small tau and p(m | c) stays
/// exact. The search loop balances this form.
JointDistribution row_stable_joint(const Matrix& ema_acc, double tau);

struct IpfStats {
    int iterations = 0;
    double final_kl = 0.0;
};

inline constexpr double kDefaultIpfDelta = 1e-4;
inline constexpr int kDefaultIpfMaxIters = 10'000;

/// Iterative proportional fitting towards uniform marginals. One iteration
/// rescales columns to 1/M and then rows to 1/C; iteration stops once
/// KL(p(m) || uniform) < delta. Throws ConvergenceError carrying the last KL.
JointDistribution balance_ipf(const JointDistribution& joint, double delta = kDefaultIpfDelta,
                              int max_iters = kDefaultIpfMaxIters, IpfStats* stats = nullptr);

/// KL(p || uniform) in nats for a vector normalised internally.
double kl_to_uniform(std::span<const double> p);

/// p(m | c), normalised over models.
std::vector<double> conditional_model_dist(const JointDistribution& joint, std::size_t config);

/// Shannon entropy (nats) of p(m | c), averaged uniformly over c.
double mean_conditional_entropy(const JointDistribution& joint);

/// c uniform over configurations from `config_rng`, then m ~ p(m | c) from
/// `model_rng`. Each draw consumes exactly one value from each stream, so the
/// configuration sequence does not depend on M.
std::pair<std::size_t, std::size_t> sample_pair(const JointDistribution& joint, Rng& config_rng,
                                                Rng& model_rng);

/// Linear from tau_init at step 0 to tau_min at total_steps, clamped after.
double temperature_at(const MixtureState& state, std::int64_t step);

enum class SelectionMode { full, proxy };

struct Candidate {
    std::size_t config = 0;
    std::size_t model = 0;
    double score = 0.0;
};

/// Best model per configuration (argmax p(m | c), lowest index on ties),
/// scored by full validation (`full`) or by a(c, m) (`proxy`); sorted by
/// descending score, ties by configuration index. Returns the first k.
std::vector<Candidate> select_candidates(const MixtureState& state, const JointDistribution& joint,
                                         std::size_t k, SelectionMode mode,
                                         Evaluator* evaluator = nullptr);

std::size_t argmax(std::span<const double> values);

}  // namespace poolnas
