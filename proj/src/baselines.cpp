#include "poolnas/baselines.hpp"

#include "poolnas/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace poolnas {

std::size_t spos_sample(std::size_t num_configs, Rng& config_rng) {
    return static_cast<std::size_t>(config_rng.uniform_index(num_configs));
}

std::size_t spos_sample(const SearchSpace& space, Rng& config_rng) {
    return spos_sample(static_cast<std::size_t>(space_size(space)), config_rng);
}

BseState::BseState(std::size_t num_configs, std::int64_t total_steps, double inv_temp_start,
                   double inv_temp_max, double beta, double initial_reward)
    : rewards_(num_configs, initial_reward),
      total_steps_(total_steps),
      inv_temp_start_(inv_temp_start),
      inv_temp_max_(inv_temp_max),
      beta_(beta) {
    if (num_configs == 0) throw ValidationError("BSE needs at least one configuration");
    if (total_steps_ < 1) throw ValidationError("total_steps must be positive");
    if (inv_temp_start_ < 0.0 || inv_temp_max_ < inv_temp_start_)
        throw ValidationError("inverse temperature must start >= 0 and not decrease");
    if (!(beta_ >= 0.0 && beta_ <= 1.0)) throw ValidationError("beta must lie in [0, 1]");
}

double BseState::inv_temp() const noexcept {
    const double frac =
        std::min(1.0, static_cast<double>(step_) / static_cast<double>(total_steps_));
    return inv_temp_start_ + (inv_temp_max_ - inv_temp_start_) * frac;
}

void BseState::observe(std::size_t config, double accuracy) {
    if (config >= rewards_.size()) throw ValidationError("config index out of range");
    if (!(accuracy >= 0.0 && accuracy <= 1.0))
        throw ValidationError("accuracy outside [0, 1]");
    rewards_[config] = beta_ * rewards_[config] + (1.0 - beta_) * accuracy;
    ++step_;
}

std::vector<double> bse_probs(std::span<const double> rewards, double inv_temp) {
    if (inv_temp < 0.0) throw ValidationError("inverse temperature must be non-negative");
    if (rewards.empty()) throw ValidationError("no rewards");
    const double top = *std::max_element(rewards.begin(), rewards.end());
    std::vector<double> p(rewards.size());
    double total = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        p[i] = std::exp(inv_temp * (rewards[i] - top));
        total += p[i];
    }
    for (double& v : p) v /= total;
    return p;
}

std::vector<double> bse_probs(const BseState& state) {
    return bse_probs(state.rewards(), state.inv_temp());
}

double ucb_score(double cumulative_reward, std::int64_t visits, std::int64_t parent_visits,
                 double explore_c) {
    if (visits < 0 || parent_visits < 0) throw ValidationError("negative visit count");
    if (visits == 0) return std::numeric_limits<double>::infinity();
    if (parent_visits < 1) throw ValidationError("parent of a visited node has no visits");
    const double n = static_cast<double>(visits);
    return cumulative_reward / n +
           explore_c * std::sqrt(std::log(static_cast<double>(parent_visits)) / n);
}

MctsTree::MctsTree(const SearchSpace& space, std::span<const PoolingConfig> configs)
    : total_blocks_(space.total_blocks()),
      num_poolings_(space.num_poolings()),
      fixed_prefix_(space.fixed_prefix()),
      resolutions_(space.resolutions()),
      configs_(configs.begin(), configs.end()),
      leaf_nodes_(configs.size(), -1) {
    nodes_.reserve(static_cast<std::size_t>(total_blocks_) * configs_.size());
    build(0, 0, -1);
    for (std::size_t c = 0; c < leaf_nodes_.size(); ++c)
        if (leaf_nodes_[c] < 0)
            throw ValidationError("configuration " + configs_[c].to_string() +
                                  " has no leaf in the resolution tree");
}

int MctsTree::build(int layer, int stage, int parent) {
    const int index = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    nodes_[index].layer = layer;
    nodes_[index].stage = stage;
    nodes_[index].resolution = resolutions_[static_cast<std::size_t>(stage)];
    nodes_[index].parent = parent;

    const int last = total_blocks_ - 1;
    if (layer == last) {
        if (stage != num_poolings_) throw ValidationError("malformed tree: leaf above last stage");
        std::vector<int> path;
        for (int n = index; n >= 0; n = nodes_[n].parent) path.push_back(n);
        std::reverse(path.begin(), path.end());
        const auto c = index_of(configs_, path_config(path));
        if (!c) throw ValidationError("tree leaf outside the enumerated configurations");
        nodes_[index].config = *c;
        nodes_[index].leaf_count = 1;
        leaf_nodes_[*c] = index;
        return index;
    }

    const int blocks_after_next = last - (layer + 1);
    std::int64_t leaves = 0;
    if (num_poolings_ - stage <= blocks_after_next) {
        const int child = build(layer + 1, stage, index);
        nodes_[index].children[kSame] = child;
        leaves += nodes_[child].leaf_count;
    }
    if (stage < num_poolings_ && layer + 1 >= fixed_prefix_ &&
        num_poolings_ - (stage + 1) <= blocks_after_next) {
        const int child = build(layer + 1, stage + 1, index);
        nodes_[index].children[kDown] = child;
        leaves += nodes_[child].leaf_count;
    }
    nodes_[index].leaf_count = leaves;
    return index;
}

PoolingConfig MctsTree::path_config(std::span<const int> path) const {
    std::vector<int> positions;
    for (std::size_t i = 1; i < path.size(); ++i)
        if (nodes_[path[i]].stage != nodes_[path[i - 1]].stage)
            positions.push_back(nodes_[path[i]].layer);
    return positions_to_config(positions, total_blocks_);
}

MctsPath MctsTree::select_path(double explore_c, bool uniform, Rng& rng) const {
    MctsPath path;
    int node = 0;
    path.nodes.push_back(node);
    while (!nodes_[node].is_leaf()) {
        const TreeNode& cur = nodes_[node];
        const int same = cur.children[kSame];
        const int down = cur.children[kDown];
        int next;
        if (same < 0 || down < 0) {
            next = same < 0 ? down : same;
        } else if (uniform) {
            const double w[2] = {static_cast<double>(nodes_[same].leaf_count),
                                 static_cast<double>(nodes_[down].leaf_count)};
            next = rng.categorical(w) == 0 ? same : down;
        } else {
            const double s_same = ucb_score(nodes_[same].cumulative_reward, nodes_[same].visits,
                                            cur.visits, explore_c);
            const double s_down = ucb_score(nodes_[down].cumulative_reward, nodes_[down].visits,
                                            cur.visits, explore_c);
            next = s_same > s_down ? same : down;
        }
        node = next;
        path.nodes.push_back(node);
    }
    if (nodes_[node].layer != total_blocks_ - 1 || nodes_[node].stage != num_poolings_)
        throw ValidationError("malformed tree: reached a leaf before placing every pooling");
    path.config = nodes_[node].config;
    return path;
}

void MctsTree::backpropagate(const MctsPath& path, double reward) {
    if (!(reward >= 0.0 && reward <= 1.0)) throw ValidationError("reward outside [0, 1]");
    if (path.nodes.empty() || path.nodes.front() != 0 || !nodes_[path.nodes.back()].is_leaf())
        throw ValidationError("path must run from the root to a leaf");
    for (int n : path.nodes) {
        nodes_[n].cumulative_reward += reward;
        nodes_[n].visits += 1;
    }
}

std::size_t MctsTree::best_config() const {
    std::size_t best = 0;
    for (std::size_t c = 1; c < leaf_nodes_.size(); ++c) {
        const TreeNode& a = nodes_[leaf_nodes_[c]];
        const TreeNode& b = nodes_[leaf_nodes_[best]];
        const double mean_a = a.visits ? a.cumulative_reward / a.visits : 0.0;
        const double mean_b = b.visits ? b.cumulative_reward / b.visits : 0.0;
        if (a.visits > b.visits || (a.visits == b.visits && mean_a > mean_b)) best = c;
    }
    return best;
}

const TreeNode& MctsTree::leaf_for(std::size_t config) const {
    if (config >= leaf_nodes_.size()) throw ValidationError("config index out of range");
    return nodes_[leaf_nodes_[config]];
}

}  // namespace poolnas
