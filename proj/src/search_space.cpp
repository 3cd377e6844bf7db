#include "poolnas/search_space.hpp"

#include "poolnas/error.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>

namespace poolnas {

int PoolingConfig::total_blocks() const noexcept {
    return std::accumulate(blocks_.begin(), blocks_.end(), 0);
}

std::string PoolingConfig::to_string() const {
    std::string out = "[";
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(blocks_[i]);
    }
    out += ']';
    return out;
}

PoolingConfig PoolingConfig::parse(std::string_view text) {
    auto fail = [&](const std::string& why) {
        throw ValidationError("cannot parse pooling config '" + std::string(text) +
                              "': " + why);
    };
    if (text.size() < 3 || text.front() != '[' || text.back() != ']') fail("expected [n0,n1,...]");
    std::string_view body = text.substr(1, text.size() - 2);
    std::vector<int> blocks;
    while (true) {
        auto comma = body.find(',');
        std::string_view item = body.substr(0, comma);
        int value = 0;
        auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
        if (ec != std::errc{} || ptr != item.data() + item.size() || item.empty())
            fail("bad block count '" + std::string(item) + "'");
        blocks.push_back(value);
        if (comma == std::string_view::npos) break;
        body.remove_prefix(comma + 1);
    }
    return PoolingConfig(std::move(blocks));
}

namespace {

std::vector<int> halving_resolutions(int input_size, int num_poolings) {
    std::vector<int> res{input_size};
    for (int i = 0; i < num_poolings; ++i) res.push_back(res.back() / 2);
    return res;
}

}  // namespace

SearchSpace::SearchSpace(int total_blocks, int num_poolings, int input_size, int fixed_prefix)
    : SearchSpace(total_blocks, num_poolings,
                  halving_resolutions(input_size, num_poolings < 0 ? 0 : num_poolings),
                  fixed_prefix) {}

SearchSpace::SearchSpace(int total_blocks, int num_poolings, std::vector<int> resolutions,
                         int fixed_prefix)
    : total_blocks_(total_blocks),
      num_poolings_(num_poolings),
      fixed_prefix_(fixed_prefix),
      resolutions_(std::move(resolutions)) {
    if (total_blocks_ < 1) throw ValidationError("total_blocks must be positive");
    if (num_poolings_ < 1) throw ValidationError("num_poolings must be positive");
    if (fixed_prefix_ < 1) throw ValidationError("fixed_prefix must be at least 1");
    if (fixed_prefix_ + num_poolings_ > total_blocks_)
        throw ValidationError("num_poolings too large: every stage needs a block");
    if (resolutions_.size() != static_cast<std::size_t>(num_poolings_) + 1)
        throw ValidationError("need exactly num_poolings + 1 resolutions");
    for (std::size_t i = 0; i + 1 < resolutions_.size(); ++i) {
        if (resolutions_[i] < 2 || resolutions_[i] % 2 != 0 ||
            resolutions_[i + 1] != resolutions_[i] / 2)
            throw ValidationError("resolutions must halve exactly at every stage");
    }
    if (resolutions_.back() < 1) throw ValidationError("final resolution below 1 px");
}

std::string SearchSpace::fingerprint() const {
    std::ostringstream out;
    out << "L=" << total_blocks_ << ";p=" << num_poolings_ << ";prefix=" << fixed_prefix_
        << ";res=";
    for (std::size_t i = 0; i < resolutions_.size(); ++i) out << (i ? "," : "") << resolutions_[i];
    return out.str();
}

std::uint64_t space_size(const SearchSpace& space) {
    const std::uint64_t n = static_cast<std::uint64_t>(space.total_blocks() - space.fixed_prefix());
    std::uint64_t k = static_cast<std::uint64_t>(space.num_poolings());
    k = std::min(k, n - k);
    // C(n, i) = C(n, i-1) * (n - i + 1) / i stays exact at every step.
    unsigned __int128 result = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        result = result * (n - k + i) / i;
        if (result > UINT64_MAX) throw OverflowError("search space size overflows 64 bits");
    }
    return static_cast<std::uint64_t>(result);
}

std::vector<PoolingConfig> enumerate_configs(const SearchSpace& space, std::uint64_t cap) {
    const std::uint64_t size = space_size(space);
    if (size > cap)
        throw ValidationError("search space has " + std::to_string(size) +
                              " configurations, above the enumeration cap of " +
                              std::to_string(cap) + "; use sampled mode instead");

    const int stages = space.num_poolings() + 1;
    const int L = space.total_blocks();
    std::vector<PoolingConfig> out;
    out.reserve(size);
    std::vector<int> blocks(stages);

    // Depth-first over stages, largest count first, gives descending lexicographic order.
    auto fill = [&](auto&& self, int stage, int remaining) -> void {
        const int min_here = stage == 0 ? space.fixed_prefix() : 1;
        if (stage == stages - 1) {
            blocks[stage] = remaining;
            out.emplace_back(blocks);
            return;
        }
        const int later = stages - 1 - stage;  // each later stage needs one block
        for (int n = remaining - later; n >= min_here; --n) {
            blocks[stage] = n;
            self(self, stage + 1, remaining - n);
        }
    };
    fill(fill, 0, L);
    return out;
}

std::vector<int> config_to_positions(const PoolingConfig& config) {
    std::vector<int> positions;
    int sum = 0;
    for (std::size_t i = 0; i + 1 < config.num_stages(); ++i) {
        sum += config[i];
        positions.push_back(sum);
    }
    return positions;
}

PoolingConfig positions_to_config(std::span<const int> positions, int total_blocks) {
    std::vector<int> blocks;
    int prev = 0;
    for (int pos : positions) {
        if (pos < 1 || pos > total_blocks - 1)
            throw ValidationError("pooling position " + std::to_string(pos) +
                                  " outside [1, " + std::to_string(total_blocks - 1) + "]");
        if (pos <= prev)
            throw ValidationError("pooling positions must be strictly increasing");
        blocks.push_back(pos - prev);
        prev = pos;
    }
    blocks.push_back(total_blocks - prev);
    return PoolingConfig(std::move(blocks));
}

std::vector<std::string> validate_config(const PoolingConfig& config, const SearchSpace& space) {
    std::vector<std::string> violations;
    const auto expected_stages = static_cast<std::size_t>(space.num_poolings()) + 1;
    if (config.num_stages() != expected_stages)
        violations.push_back("stage count " + std::to_string(config.num_stages()) +
                             " != " + std::to_string(expected_stages));
    for (std::size_t i = 0; i < config.num_stages(); ++i) {
        if (config[i] < 1)
            violations.push_back("stage " + std::to_string(i) + " is empty");
    }
    if (config.num_stages() > 0 && config[0] >= 1 && config[0] < space.fixed_prefix())
        violations.push_back("first stage shorter than the fixed prefix of " +
                             std::to_string(space.fixed_prefix()));
    if (config.total_blocks() != space.total_blocks())
        violations.push_back("block sum " + std::to_string(config.total_blocks()) +
                             " != L = " + std::to_string(space.total_blocks()));
    return violations;
}

std::vector<int> block_stages(const PoolingConfig& config) {
    std::vector<int> stages;
    for (std::size_t s = 0; s < config.num_stages(); ++s)
        stages.insert(stages.end(), static_cast<std::size_t>(std::max(config[s], 0)),
                      static_cast<int>(s));
    return stages;
}

std::optional<std::size_t> index_of(std::span<const PoolingConfig> configs,
                                    const PoolingConfig& config) {
    auto it = std::find(configs.begin(), configs.end(), config);
    if (it == configs.end()) return std::nullopt;
    return static_cast<std::size_t>(it - configs.begin());
}

}  // namespace poolnas
