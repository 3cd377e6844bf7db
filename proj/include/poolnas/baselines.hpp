#pragma once

#include "poolnas/rng.hpp"
#include "poolnas/search_space.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace poolnas {

/// Single-path one-shot: a uniform configuration index. Uses the same draw as
/// the configuration half of sample_pair, so SPOS and a one-model mixture
/// produce identical configuration sequences from the same stream.
std::size_t spos_sample(std::size_t num_configs, Rng& config_rng);
std::size_t spos_sample(const SearchSpace& space, Rng& config_rng);

/// Boltzmann softmax exploration over configurations with a linearly rising
/// inverse temperature.
class BseState {
public:
    BseState(std::size_t num_configs, std::int64_t total_steps, double inv_temp_start = 1.0,
             double inv_temp_max = 100.0, double beta = 0.9, double initial_reward = 0.5);

    const std::vector<double>& rewards() const noexcept { return rewards_; }
    double inv_temp() const noexcept;
    std::int64_t step() const noexcept { return step_; }

    /// EMA reward update for the sampled configuration; advances the schedule.
    void observe(std::size_t config, double accuracy);

private:
    std::vector<double> rewards_;
    std::int64_t total_steps_;
    std::int64_t step_ = 0;
    double inv_temp_start_;
    double inv_temp_max_;
    double beta_;
};

/// p(c) proportional to exp(inv_temp * a_c), max-stabilised.
std::vector<double> bse_probs(std::span<const double> rewards, double inv_temp);
std::vector<double> bse_probs(const BseState& state);

/// Mean reward plus explore_c * sqrt(ln(parent_visits) / visits); +infinity
/// when visits is zero. Negative counts throw ValidationError.
double ucb_score(double cumulative_reward, std::int64_t visits, std::int64_t parent_visits,
                 double explore_c);

struct TreeNode {
    int layer = 0;              ///< block index
    int stage = 0;              ///< resolution stage of this block
    int resolution = 0;         ///< spatial size in pixels
    double cumulative_reward = 0.0;
    std::int64_t visits = 0;
    int parent = -1;
    std::array<int, 2> children{-1, -1};  ///< [same resolution, downsample]
    std::int64_t leaf_count = 0;          ///< leaves in this subtree
    std::size_t config = 0;               ///< enumeration index, leaves only

    bool is_leaf() const noexcept { return children[0] < 0 && children[1] < 0; }
};

struct MctsPath {
    std::vector<int> nodes;  ///< root first, leaf last
    std::size_t config = 0;
};

/// Binary tree over blocks: each generation is a block, each node either keeps
/// the resolution or downsamples. Only branches that can still place all
/// poolings exist, so leaves correspond one-to-one with configurations.
class MctsTree {
public:
    enum Child { kSame = 0, kDown = 1 };

    MctsTree(const SearchSpace& space, std::span<const PoolingConfig> configs);

    const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
    const TreeNode& root() const { return nodes_.front(); }
    std::size_t num_leaves() const noexcept { return leaf_nodes_.size(); }

    /// Uniform mode picks each child with probability proportional to its
    /// leaf count (uniform over configurations); otherwise the child with the
    /// highest UCB score, downsample child on ties.
    MctsPath select_path(double explore_c, bool uniform, Rng& rng) const;

    /// Adds one visit and `reward` to every node on the path, root included.
    void backpropagate(const MctsPath& path, double reward);

    /// Most visited leaf, ties by higher mean reward, then lower config index.
    std::size_t best_config() const;

    /// Leaf node holding each configuration.
    const TreeNode& leaf_for(std::size_t config) const;

    /// Root-to-leaf config derived from a node path.
    PoolingConfig path_config(std::span<const int> path) const;

private:
    int build(int layer, int stage, int parent);

    int total_blocks_;
    int num_poolings_;
    int fixed_prefix_;
    std::vector<int> resolutions_;
    std::vector<PoolingConfig> configs_;
    std::vector<TreeNode> nodes_;
    std::vector<int> leaf_nodes_;  ///< indexed by config
};

}  // namespace poolnas
