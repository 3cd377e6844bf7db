#include "poolnas/error.hpp"
#include "poolnas/mixture.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <numbers>

namespace poolnas {
namespace {

using testing::chi_square_uniform;
using testing::reference_balance;

MixtureParams params(std::size_t C, std::size_t M, double beta = 0.9, double init = 0.5,
                     std::int64_t steps = 1000) {
    MixtureParams p;
    p.num_configs = C;
    p.num_models = M;
    p.beta = beta;
    p.initial_accuracy = init;
    p.total_steps = steps;
    return p;
}

Matrix random_positive(Rng& rng, std::size_t C, std::size_t M, double spread = 4.0) {
    Matrix m(C, M);
    for (double& v : m.values()) v = std::exp(spread * (rng.uniform() - 0.5));
    double total = 0.0;
    for (double v : m.values()) total += v;
    for (double& v : m.values()) v /= total;
    return m;
}

TEST(MixtureStateTest, EmaUpdate) {
    MixtureState zero(params(2, 2, 0.9, 0.0));
    zero.update_accuracy(0, 1, 1.0);
    EXPECT_NEAR(zero.ema_acc()(0, 1), 0.1, 1e-15);
    EXPECT_EQ(zero.ema_acc()(0, 0), 0.0);
    EXPECT_EQ(zero.ema_acc()(1, 1), 0.0);
    EXPECT_EQ(zero.visit_counts()(0, 1), 1);
    EXPECT_EQ(zero.step(), 1);

    MixtureState frozen(params(1, 1, 1.0, 0.5));
    frozen.update_accuracy(0, 0, 0.0);
    EXPECT_EQ(frozen.ema_acc()(0, 0), 0.5);

    MixtureState hand(params(1, 1, 0.9, 0.8));
    hand.update_accuracy(0, 0, 0.9);
    EXPECT_NEAR(hand.ema_acc()(0, 0), 0.81, 1e-15);
}

TEST(MixtureStateTest, RejectsBadUpdates) {
    MixtureState s(params(3, 2));
    EXPECT_THROW(s.update_accuracy(0, 0, 1.5), ValidationError);
    EXPECT_THROW(s.update_accuracy(0, 0, -0.1), ValidationError);
    EXPECT_THROW(s.update_accuracy(0, 0, std::nan("")), ValidationError);
    EXPECT_THROW(s.update_accuracy(3, 0, 0.5), ValidationError);
    EXPECT_THROW(s.update_accuracy(0, 2, 0.5), ValidationError);
    EXPECT_EQ(s.step(), 0);
    EXPECT_THROW(MixtureState(params(3, 2, 1.1)), ValidationError);
    EXPECT_THROW(MixtureState(params(0, 2)), ValidationError);
}

TEST(MixtureStateProperty, AccuraciesStayBounded) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const double beta = rng.uniform();
        MixtureState s(params(6, 3, beta, rng.uniform()));
        for (int i = 0; i < 2000; ++i) {
            // Mix of interior values and the endpoints.
            double acc = rng.uniform();
            if (i % 7 == 0) acc = 1.0;
            if (i % 11 == 0) acc = 0.0;
            s.update_accuracy(rng.uniform_index(6), rng.uniform_index(3), acc);
        }
        std::int64_t visits = 0;
        for (auto v : s.visit_counts().values()) visits += v;
        EXPECT_EQ(visits, s.step());
        for (double a : s.ema_acc().values()) {
            EXPECT_GE(a, 0.0);
            EXPECT_LE(a, 1.0);
        }
    }
}

TEST(JointTest, UniformAccuraciesGiveUniformJoint) {
    Matrix a(4, 3, 0.7);
    for (double tau : {1.0, 0.1, 0.0025}) {
        const auto joint = joint_from_accuracies(a, tau);
        for (double p : joint.probs.values()) EXPECT_NEAR(p, 1.0 / 12.0, 1e-15);
    }
}

TEST(JointTest, HandSoftmax) {
    Matrix a(2, 2, 0.0);
    a(0, 0) = 1.0;
    const auto joint = joint_from_accuracies(a, 1.0);
    const double e = std::numbers::e;
    EXPECT_NEAR(joint.probs(0, 0), e / (e + 3), 1e-15);
    EXPECT_NEAR(joint.probs(0, 1), 1 / (e + 3), 1e-15);
    EXPECT_NEAR(joint.probs(1, 0), 1 / (e + 3), 1e-15);
    EXPECT_NEAR(joint.probs(1, 1), 1 / (e + 3), 1e-15);
    EXPECT_NEAR(joint.probs(0, 0), 0.4754, 5e-5);
    EXPECT_NEAR(joint.probs(1, 1), 0.1749, 5e-5);

    EXPECT_GT(joint_from_accuracies(a, 0.01).probs(0, 0), 0.999);
    EXPECT_GT(joint_from_accuracies(a, 0.0025).probs(0, 0), 0.999);

    double total = 0.0;
    for (double p : joint.probs.values()) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(JointTest, RejectsNonPositiveTemperature) {
    Matrix a(2, 2, 0.5);
    EXPECT_THROW(joint_from_accuracies(a, 0.0), ValidationError);
    EXPECT_THROW(joint_from_accuracies(a, -1.0), ValidationError);
}

TEST(JointProperty, ArgmaxInvariantOverTemperatures) {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        Matrix a(7, 4);
        for (double& v : a.values()) v = rng.uniform();
        if (trial % 5 == 0) a(3, 2) = a(1, 1);  // ties
        for (double tau : {5.0, 1.0, 0.3, 0.01, 0.0025, 1e-4}) {
            const auto joint = joint_from_accuracies(a, tau);
            EXPECT_EQ(argmax(joint.probs.values()), argmax(a.values()));
            for (double p : joint.probs.values()) EXPECT_GT(p, 0.0);
        }
    }
}

TEST(JointProperty, ConditionalEntropyShrinksWithTemperature) {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix a(5, 4);
        for (double& v : a.values()) v = rng.uniform();
        double previous = INFINITY;
        for (double tau = 2.0; tau > 1e-3; tau *= 0.8) {
            const double h = mean_conditional_entropy(row_stable_joint(a, tau));
            EXPECT_LE(h, previous + 1e-12);
            previous = h;
        }
    }
}

TEST(JointTest, RowStableFormBalancesIdentically) {
    Rng rng(13);
    for (int trial = 0; trial < 100; ++trial) {
        Matrix a(6, 3);
        for (double& v : a.values()) v = rng.uniform();
        for (double tau : {1.0, 0.2, 0.05}) {
            const auto global = balance_ipf(joint_from_accuracies(a, tau), 1e-20, 1'000'000);
            const auto rowwise = balance_ipf(row_stable_joint(a, tau), 1e-20, 1'000'000);
            for (std::size_t i = 0; i < a.values().size(); ++i)
                ASSERT_NEAR(global.probs.values()[i], rowwise.probs.values()[i], 1e-10);
        }
    }
}

TEST(JointTest, RowStableKeepsConditionalsAtTinyTemperature) {
    Matrix a(2, 2);
    a(0, 0) = 0.9, a(0, 1) = 0.9;  // global max row
    a(1, 0) = 0.1, a(1, 1) = 0.1 - 1e-3;
    const double tau = 1e-3;
    const auto q = conditional_model_dist(row_stable_joint(a, tau), 1);
    EXPECT_NEAR(q[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
    for (double p : row_stable_joint(a, tau).config_marginal()) EXPECT_NEAR(p, 0.5, 1e-15);
}

TEST(IpfTest, UniformIsFixedPoint) {
    JointDistribution joint{Matrix(2, 2, 0.25)};
    IpfStats stats;
    const auto out = balance_ipf(joint, kDefaultIpfDelta, kDefaultIpfMaxIters, &stats);
    EXPECT_EQ(stats.iterations, 1);
    for (double p : out.probs.values()) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(IpfTest, TwoByTwoMatchesClosedFormAndOracle) {
    Matrix m(2, 2);
    m(0, 0) = 0.4, m(0, 1) = 0.1, m(1, 0) = 0.2, m(1, 1) = 0.3;
    const auto out = balance_ipf({m}, 1e-20);

    // Marginals 0.5 and cross ratio 6: x^2 / (0.5 - x)^2 = 6.
    const double x = 0.5 * std::sqrt(6.0) / (1.0 + std::sqrt(6.0));
    EXPECT_NEAR(out.probs(0, 0), x, 1e-10);
    EXPECT_NEAR(out.probs(1, 1), x, 1e-10);
    EXPECT_NEAR(out.probs(0, 1), 0.5 - x, 1e-10);
    EXPECT_NEAR(out.probs(1, 0), 0.5 - x, 1e-10);
    const double ratio =
        out.probs(0, 0) * out.probs(1, 1) / (out.probs(0, 1) * out.probs(1, 0));
    EXPECT_NEAR(ratio, 6.0, 1e-8);

    const Matrix oracle = reference_balance(m);
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_NEAR(out.probs.values()[i], oracle.values()[i], 1e-10);
}

TEST(IpfTest, RejectsZeroEntries) {
    Matrix m(2, 2, 0.25);
    m(1, 0) = 0.0;
    EXPECT_THROW(balance_ipf({m}), ValidationError);
}

TEST(IpfTest, ReportsNonConvergence) {
    Rng rng(3);
    const Matrix m = random_positive(rng, 6, 4, 12.0);
    try {
        balance_ipf({m}, 1e-30, 2);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_GT(e.final_residual(), 1e-30);
    }
}

TEST(IpfProperty, MatchesOracleAndPreservesCrossRatios) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const Matrix m = random_positive(rng, 5, 4);
        const auto out = balance_ipf({m}, 1e-20);
        const Matrix oracle = reference_balance(m);
        for (std::size_t i = 0; i < m.values().size(); ++i)
            ASSERT_NEAR(out.probs.values()[i], oracle.values()[i], 1e-8);
        for (std::size_t c = 0; c + 1 < 5; ++c)
            for (std::size_t k = 0; k + 1 < 4; ++k) {
                const double before = m(c, k) * m(c + 1, k + 1) / (m(c, k + 1) * m(c + 1, k));
                const double after = out.probs(c, k) * out.probs(c + 1, k + 1) /
                                     (out.probs(c, k + 1) * out.probs(c + 1, k));
                EXPECT_NEAR(after / before, 1.0, 1e-10);
            }
    }
}

TEST(IpfProperty, MarginalsBalancedAtPaperThreshold) {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t C = 1 + rng.uniform_index(36), M = 1 + rng.uniform_index(8);
        const auto out = balance_ipf({random_positive(rng, C, M, 8.0)}, 1e-4);
        EXPECT_LT(kl_to_uniform(out.model_marginal()), 1e-4);
        EXPECT_LT(kl_to_uniform(out.config_marginal()), 1e-12);
        double total = 0.0;
        for (double p : out.probs.values()) total += p;
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(KlTest, KnownValues) {
    EXPECT_EQ(kl_to_uniform(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0.0);
    EXPECT_NEAR(kl_to_uniform(std::vector<double>{1.0, 0.0}), std::log(2.0), 1e-15);
    EXPECT_NEAR(kl_to_uniform(std::vector<double>{0.6, 0.4}),
                0.6 * std::log(1.2) + 0.4 * std::log(0.8), 1e-15);
}

TEST(ConditionalTest, Normalisation) {
    JointDistribution uniform{Matrix(3, 4, 1.0 / 12.0)};
    for (double q : conditional_model_dist(uniform, 1)) EXPECT_NEAR(q, 0.25, 1e-15);

    Matrix m(1, 2);
    m(0, 0) = 0.3, m(0, 1) = 0.1;
    const auto q = conditional_model_dist({m}, 0);
    EXPECT_NEAR(q[0], 0.75, 1e-15);
    EXPECT_NEAR(q[1], 0.25, 1e-15);

    JointDistribution single{Matrix(5, 1, 0.2)};
    EXPECT_EQ(conditional_model_dist(single, 4), std::vector<double>{1.0});
}

TEST(SamplePairTest, SingleModelAlwaysZeroAndConfigsUniform) {
    JointDistribution joint{Matrix(36, 1, 1.0 / 36.0)};
    Rng crng(1), mrng(2);
    std::vector<std::int64_t> counts(36, 0);
    for (int i = 0; i < 10'000; ++i) {
        auto [c, m] = sample_pair(joint, crng, mrng);
        EXPECT_EQ(m, 0u);
        ++counts[c];
    }
    EXPECT_LT(chi_square_uniform(counts), testing::kChiSquare999Dof35);
}

TEST(SamplePairTest, NearDegenerateConditional) {
    Matrix m(3, 2);
    for (std::size_t c = 0; c < 3; ++c) m(c, 0) = (1.0 - 1e-10) / 3, m(c, 1) = 1e-10 / 3;
    Rng crng(9), mrng(10);
    for (int i = 0; i < 10'000; ++i) EXPECT_EQ(sample_pair({m}, crng, mrng).second, 0u);
}

TEST(SamplePairTest, ConfigChiSquareOver100kDraws) {
    Rng rng(4);
    JointDistribution joint{random_positive(rng, 36, 4)};
    joint = balance_ipf(joint);
    Rng crng(13), mrng(14);
    std::vector<std::int64_t> counts(36, 0);
    for (int i = 0; i < 100'000; ++i) ++counts[sample_pair(joint, crng, mrng).first];
    EXPECT_LT(chi_square_uniform(counts), testing::kChiSquare999Dof35);
}

TEST(SamplePairTest, ModelFrequenciesFollowConditional) {
    Matrix m(1, 3);
    m(0, 0) = 0.5, m(0, 1) = 0.3, m(0, 2) = 0.2;
    Rng crng(1), mrng(2);
    std::vector<int> counts(3, 0);
    const int n = 100'000;
    for (int i = 0; i < n; ++i) ++counts[sample_pair({m}, crng, mrng).second];
    // 5 sigma binomial bands.
    for (int k = 0; k < 3; ++k) {
        const double p = m(0, k);
        EXPECT_NEAR(counts[k] / double(n), p, 5 * std::sqrt(p * (1 - p) / n));
    }
}

TEST(TemperatureTest, LinearScheduleWithFloor) {
    MixtureParams p = params(36, 4, 0.9, 0.5, 1000);
    MixtureState s(p);
    EXPECT_DOUBLE_EQ(s.tau_min(), 0.0025);
    EXPECT_DOUBLE_EQ(temperature_at(s, 0), 1.0);
    EXPECT_DOUBLE_EQ(temperature_at(s, 1000), 0.0025);
    EXPECT_NEAR(temperature_at(s, 500), 0.50125, 1e-15);
    EXPECT_DOUBLE_EQ(temperature_at(s, 5000), 0.0025);
    EXPECT_THROW(temperature_at(s, -1), ValidationError);
    double prev = 2.0;
    for (int t = 0; t <= 1000; t += 50) {
        EXPECT_LT(temperature_at(s, t), prev);
        prev = temperature_at(s, t);
    }
}

class TableEvaluator final : public Evaluator {
public:
    explicit TableEvaluator(Matrix acc) : acc_(std::move(acc)) {}
    std::size_t num_configs() const override { return acc_.rows(); }
    std::size_t num_models() const override { return acc_.cols(); }
    StepOutcome train_step(std::size_t c, std::size_t m) override { return {acc_(c, m), {}}; }
    double validate(std::size_t c, std::size_t m) override {
        if (c == fail_on) throw std::runtime_error("backend exploded");
        return acc_(c, m);
    }
    std::size_t fail_on = SIZE_MAX;

private:
    Matrix acc_;
};

TEST(SelectTest, UniformTiesFollowConfigOrder) {
    MixtureState s(params(5, 2));
    const auto joint = balance_ipf(joint_from_accuracies(s.ema_acc(), 1.0));
    const auto proxy = select_candidates(s, joint, 5, SelectionMode::proxy);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(proxy[i].config, i);
        EXPECT_EQ(proxy[i].model, 0u);
    }
    TableEvaluator eval(Matrix(5, 2, 0.9));
    const auto full = select_candidates(s, joint, 3, SelectionMode::full, &eval);
    ASSERT_EQ(full.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(full[i].config, i);
}

TEST(SelectTest, ProxyFindsDominantEntry) {
    MixtureState s(params(6, 3, 0.0, 0.2));
    s.update_accuracy(4, 2, 0.95);
    const auto joint = balance_ipf(joint_from_accuracies(s.ema_acc(), 0.05));
    const auto top = select_candidates(s, joint, 1, SelectionMode::proxy);
    ASSERT_EQ(top.size(), 1u);
    EXPECT_EQ(top[0].config, 4u);
    EXPECT_EQ(top[0].model, 2u);
    EXPECT_DOUBLE_EQ(top[0].score, 0.95);
}

TEST(SelectTest, FullModeScoresBestModelAndPropagatesFailures) {
    MixtureState s(params(3, 2, 0.0, 0.5));
    s.update_accuracy(0, 1, 0.9);
    s.update_accuracy(1, 0, 0.9);
    s.update_accuracy(2, 1, 0.9);
    const auto joint = balance_ipf(joint_from_accuracies(s.ema_acc(), 0.1));
    Matrix truth(3, 2, 0.0);
    truth(0, 1) = 0.6, truth(1, 0) = 0.8, truth(2, 1) = 0.7;
    TableEvaluator eval(truth);
    const auto ranked = select_candidates(s, joint, 3, SelectionMode::full, &eval);
    EXPECT_EQ(ranked[0].config, 1u);
    EXPECT_EQ(ranked[0].model, 0u);
    EXPECT_EQ(ranked[1].config, 2u);
    EXPECT_EQ(ranked[2].config, 0u);

    eval.fail_on = 2;
    try {
        select_candidates(s, joint, 3, SelectionMode::full, &eval);
        FAIL() << "expected EvaluationError";
    } catch (const EvaluationError& e) {
        EXPECT_EQ(e.config(), 2u);
        EXPECT_EQ(e.model(), 1u);
    }
    EXPECT_THROW(select_candidates(s, joint, 4, SelectionMode::proxy), ValidationError);
    EXPECT_THROW(select_candidates(s, joint, 1, SelectionMode::full), ValidationError);
}

TEST(CheckpointTest, ResumesBitIdentically) {
    const std::string fp = "L=10;p=2;prefix=1;res=32,16,8";
    MixtureState live(params(36, 4, 0.9, 0.5, 400));
    Rng crng(21), mrng(22), acc_rng(23);
    auto step = [&](MixtureState& s, Rng& cr, Rng& mr, Rng& ar) {
        const auto joint = balance_ipf(joint_from_accuracies(s.ema_acc(), temperature_at(s, s.step())));
        auto [c, m] = sample_pair(joint, cr, mr);
        s.update_accuracy(c, m, 0.5 + 0.4 * ar.uniform());
        return std::pair{c, m};
    };
    for (int i = 0; i < 200; ++i) step(live, crng, mrng, acc_rng);

    const std::string text = live.to_json(fp).dump();
    MixtureState resumed = MixtureState::from_json(nlohmann::json::parse(text), fp);
    EXPECT_EQ(resumed, live);

    Rng crng2 = crng, mrng2 = mrng, acc_rng2 = acc_rng;
    for (int i = 0; i < 200; ++i)
        ASSERT_EQ(step(live, crng, mrng, acc_rng), step(resumed, crng2, mrng2, acc_rng2));
    EXPECT_EQ(resumed, live);

    EXPECT_THROW(MixtureState::from_json(nlohmann::json::parse(text), "L=9;p=3"), ValidationError);
    auto broken = nlohmann::json::parse(text);
    broken["step"] = 3;
    EXPECT_THROW(MixtureState::from_json(broken, fp), ValidationError);
}

}  // namespace
}  // namespace poolnas
