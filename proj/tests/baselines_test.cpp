#include "poolnas/baselines.hpp"
#include "poolnas/error.hpp"
#include "poolnas/mixture.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

namespace poolnas {
namespace {

using testing::chi_square_uniform;

TEST(SposTest, CountsConcentrate) {
    Rng rng = Rng::substream(1, "config");
    std::vector<std::int64_t> counts(36, 0);
    for (int i = 0; i < 36'000; ++i) ++counts[spos_sample(36, rng)];
    for (auto c : counts) {
        EXPECT_GE(c, 800);
        EXPECT_LE(c, 1200);
    }
    EXPECT_LT(chi_square_uniform(counts), testing::kChiSquare999Dof35);
}

TEST(SposTest, SingleConfig) {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(spos_sample(1, rng), 0u);
    const SearchSpace one(3, 2, 32);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(spos_sample(one, rng), 0u);
}

TEST(SposTest, MatchesSinglePathMixture) {
    Rng spos_rng = Rng::substream(42, "config");
    Rng crng = Rng::substream(42, "config");
    Rng mrng = Rng::substream(42, "model");
    JointDistribution joint{Matrix(36, 1, 1.0 / 36.0)};
    for (int i = 0; i < 10'000; ++i)
        ASSERT_EQ(spos_sample(36, spos_rng), sample_pair(joint, crng, mrng).first);
}

TEST(BseTest, HandSoftmax) {
    const std::vector<double> a{1.0, 0.0};
    const auto p = bse_probs(a, 1.0);
    const double e = std::numbers::e;
    EXPECT_NEAR(p[0], e / (e + 1), 1e-15);
    EXPECT_NEAR(p[1], 1 / (e + 1), 1e-15);
    EXPECT_NEAR(p[0], 0.7311, 5e-5);

    for (double q : bse_probs(std::vector<double>{0.3, 0.9, 0.1}, 0.0)) EXPECT_NEAR(q, 1.0 / 3, 1e-15);
    for (double t : {0.5, 10.0, 1e4})
        for (double q : bse_probs(std::vector<double>(4, 0.7), t)) EXPECT_NEAR(q, 0.25, 1e-15);
    EXPECT_THROW(bse_probs(a, -1.0), ValidationError);
}

TEST(BseTest, ScheduleRisesLinearly) {
    BseState s(4, 100);
    EXPECT_DOUBLE_EQ(s.inv_temp(), 1.0);
    double prev = s.inv_temp();
    for (int i = 0; i < 150; ++i) {
        s.observe(i % 4, 0.5);
        EXPECT_GE(s.inv_temp(), prev);
        prev = s.inv_temp();
        if (s.step() == 50) EXPECT_DOUBLE_EQ(s.inv_temp(), 50.5);
    }
    EXPECT_DOUBLE_EQ(s.inv_temp(), 100.0);
    EXPECT_THROW(s.observe(4, 0.5), ValidationError);
    EXPECT_THROW(s.observe(0, 1.2), ValidationError);
}

TEST(BseProperty, ArgmaxScaleInvariant) {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a(9), scaled(9);
        for (double& v : a) v = rng.uniform();
        const double k = 0.01 + 10 * rng.uniform();
        for (std::size_t i = 0; i < a.size(); ++i) scaled[i] = k * a[i];
        const double t = 0.1 + 50 * rng.uniform();
        EXPECT_EQ(argmax(bse_probs(a, t)), argmax(bse_probs(scaled, t)));
        EXPECT_EQ(argmax(bse_probs(a, t)), argmax(a));
    }
}

TEST(UcbTest, Examples) {
    EXPECT_NEAR(ucb_score(4.0, 5, 10, 1.0), 0.8 + std::sqrt(std::log(10.0) / 5.0), 1e-15);
    EXPECT_NEAR(ucb_score(4.0, 5, 10, 1.0), 1.4786, 5e-5);
    EXPECT_TRUE(std::isinf(ucb_score(0.0, 0, 0, 1.0)));
    EXPECT_TRUE(std::isinf(ucb_score(3.0, 0, 7, 2.0)));
    EXPECT_EQ(ucb_score(0.0, 6, 6, 0.0), 0.0);
    EXPECT_THROW(ucb_score(1.0, -1, 3, 1.0), ValidationError);
    EXPECT_THROW(ucb_score(1.0, 1, -3, 1.0), ValidationError);
}

TEST(UcbProperty, BonusMonotoneInCounts) {
    for (std::int64_t parent = 2; parent < 200; parent += 7)
        for (std::int64_t n = 1; n < parent; ++n) {
            const double bonus = ucb_score(0.0, n, parent, 1.0);
            EXPECT_GT(bonus, ucb_score(0.0, n + 1, parent, 1.0));
            EXPECT_LT(bonus, ucb_score(0.0, n, parent + 1, 1.0));
        }
}

class MctsTest : public ::testing::Test {
protected:
    SearchSpace space{10, 2, 32};
    std::vector<PoolingConfig> configs = enumerate_configs(space);
    MctsTree tree{space, configs};

    static std::vector<std::vector<int>> all_paths(const MctsTree& t) {
        std::vector<std::vector<int>> out;
        std::vector<int> stack{0};
        std::function<void(int)> walk = [&](int n) {
            const auto& node = t.nodes()[n];
            if (node.is_leaf()) {
                out.push_back(stack);
                return;
            }
            for (int child : node.children)
                if (child >= 0) {
                    stack.push_back(child);
                    walk(child);
                    stack.pop_back();
                }
        };
        walk(0);
        return out;
    }
};

TEST_F(MctsTest, LeafCountMatchesSpace) {
    EXPECT_EQ(tree.num_leaves(), 36u);
    EXPECT_EQ(tree.root().leaf_count, 36);
    std::size_t leaves = 0;
    for (const auto& n : tree.nodes()) leaves += n.is_leaf();
    EXPECT_EQ(leaves, 36u);

    for (auto [L, p] : {std::pair{9, 3}, {8, 3}, {5, 2}}) {
        const SearchSpace s(L, p, 64);
        const auto cs = enumerate_configs(s);
        EXPECT_EQ(MctsTree(s, cs).num_leaves(), space_size(s));
    }
}

TEST_F(MctsTest, PathsBijectWithConfigs) {
    std::set<PoolingConfig> seen;
    for (const auto& path : all_paths(tree)) {
        const PoolingConfig c = tree.path_config(path);
        EXPECT_TRUE(validate_config(c, space).empty()) << c.to_string();
        EXPECT_TRUE(seen.insert(c).second) << c.to_string();
        EXPECT_EQ(tree.leaf_for(*index_of(configs, c)).config, *index_of(configs, c));
        // Resolution is the input size halved once per stage.
        for (int n : path)
            EXPECT_EQ(tree.nodes()[n].resolution, 32 >> tree.nodes()[n].stage);
    }
    EXPECT_EQ(seen, std::set<PoolingConfig>(configs.begin(), configs.end()));
}

TEST_F(MctsTest, WarmupIsUniformOverLeaves) {
    Rng rng = Rng::substream(5, "config");
    std::vector<std::int64_t> counts(36, 0);
    for (int i = 0; i < 10'000; ++i) {
        const auto path = tree.select_path(1.0, true, rng);
        EXPECT_EQ(tree.path_config(path.nodes), configs[path.config]);
        ++counts[path.config];
    }
    for (auto c : counts) EXPECT_GT(c, 0);
    EXPECT_LT(chi_square_uniform(counts), testing::kChiSquare999Dof35);
}

TEST_F(MctsTest, PureExploitationFollowsRewardMass) {
    Rng rng(1);
    // First visit every leaf once with zero reward, then pile reward on one leaf.
    for (const auto& path : all_paths(tree)) tree.backpropagate({path, tree.nodes()[path.back()].config}, 0.0);
    const std::size_t target = *index_of(configs, PoolingConfig({7, 1, 2}));
    std::vector<int> target_path;
    for (const auto& path : all_paths(tree))
        if (tree.nodes()[path.back()].config == target) target_path = path;
    for (int i = 0; i < 50; ++i) tree.backpropagate({target_path, target}, 1.0);

    for (int i = 0; i < 20; ++i) {
        const auto path = tree.select_path(0.0, false, rng);
        EXPECT_EQ(path.config, target);
        tree.backpropagate(path, 0.9);
    }
    EXPECT_EQ(tree.best_config(), target);
}

TEST_F(MctsTest, UnvisitedChildrenComeFirst) {
    Rng rng(2);
    std::set<std::size_t> reached;
    // With +inf for unvisited nodes, the first visits fan out before any repeat
    // at the root's children.
    for (int i = 0; i < 2; ++i) {
        const auto path = tree.select_path(1.0, false, rng);
        reached.insert(static_cast<std::size_t>(path.nodes[1]));
        tree.backpropagate(path, 0.5);
    }
    EXPECT_EQ(reached.size(), 2u);
}

TEST_F(MctsTest, BackpropagationExamples) {
    Rng rng(3);
    const auto path = tree.select_path(1.0, true, rng);
    tree.backpropagate(path, 1.0);
    for (int n : path.nodes) {
        EXPECT_EQ(tree.nodes()[n].visits, 1);
        EXPECT_EQ(tree.nodes()[n].cumulative_reward, 1.0);
    }

    MctsTree fresh(space, configs);
    fresh.backpropagate(path, 0.4);
    fresh.backpropagate(path, 0.6);
    for (int n : path.nodes)
        EXPECT_DOUBLE_EQ(fresh.nodes()[n].cumulative_reward / fresh.nodes()[n].visits, 0.5);

    EXPECT_THROW(fresh.backpropagate(path, 1.5), ValidationError);
    EXPECT_THROW(fresh.backpropagate(path, -0.1), ValidationError);
    MctsPath partial = path;
    partial.nodes.pop_back();
    EXPECT_THROW(fresh.backpropagate(partial, 0.5), ValidationError);
}

TEST_F(MctsTest, VisitsSumOverChildren) {
    Rng rng(4);
    for (int i = 0; i < 3000; ++i) {
        const bool warm = i < 36;
        const auto path = tree.select_path(1.0, warm, rng);
        tree.backpropagate(path, rng.uniform());
        if (i % 250 != 0) continue;
        for (const auto& node : tree.nodes()) {
            if (node.is_leaf()) continue;
            std::int64_t sum = 0;
            for (int child : node.children)
                if (child >= 0) sum += tree.nodes()[child].visits;
            ASSERT_EQ(sum, node.visits);
        }
    }
    EXPECT_EQ(tree.root().visits, 3000);
}

TEST_F(MctsTest, BestConfigTieBreaksOnMeanReward) {
    const auto paths = all_paths(tree);
    const auto& a = paths[3];
    const auto& b = paths[17];
    tree.backpropagate({a, tree.nodes()[a.back()].config}, 0.2);
    tree.backpropagate({b, tree.nodes()[b.back()].config}, 0.8);
    EXPECT_EQ(tree.best_config(), tree.nodes()[b.back()].config);
}

}  // namespace
}  // namespace poolnas
