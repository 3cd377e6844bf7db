#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace poolnas {

/// A pooling placement expressed as the number of blocks at each resolution
/// stage, e.g. [4,3,3] for ResNet20.
class PoolingConfig {
public:
    PoolingConfig() = default;
    explicit PoolingConfig(std::vector<int> blocks_per_stage)
        : blocks_(std::move(blocks_per_stage)) {}

    const std::vector<int>& blocks_per_stage() const noexcept { return blocks_; }
    std::size_t num_stages() const noexcept { return blocks_.size(); }
    int operator[](std::size_t i) const { return blocks_[i]; }
    int total_blocks() const noexcept;

    /// "[4,3,3]": no spaces, the form used by the CLI and result files.
    std::string to_string() const;
    static PoolingConfig parse(std::string_view text);

    friend auto operator<=>(const PoolingConfig&, const PoolingConfig&) = default;
    friend bool operator==(const PoolingConfig&, const PoolingConfig&) = default;

private:
    std::vector<int> blocks_;
};

inline constexpr std::uint64_t kDefaultEnumerationCap = 100'000;

/// Constrained space of pooling placements over a fixed-depth network of
/// `total_blocks` basic blocks with `num_poolings` factor-two downsamplings.
/// The first `fixed_prefix` blocks always run at the input resolution.
class SearchSpace {
public:
    /// Resolutions derived by halving `input_size` p times.
    SearchSpace(int total_blocks, int num_poolings, int input_size = 32,
                int fixed_prefix = 1);
    SearchSpace(int total_blocks, int num_poolings, std::vector<int> resolutions,
                int fixed_prefix);

    int total_blocks() const noexcept { return total_blocks_; }
    int num_poolings() const noexcept { return num_poolings_; }
    int fixed_prefix() const noexcept { return fixed_prefix_; }
    int input_size() const noexcept { return resolutions_.front(); }
    const std::vector<int>& resolutions() const noexcept { return resolutions_; }

    /// Stable identifier written into checkpoints and reports.
    std::string fingerprint() const;

    friend bool operator==(const SearchSpace&, const SearchSpace&) = default;

private:
    int total_blocks_;
    int num_poolings_;
    int fixed_prefix_;
    std::vector<int> resolutions_;
};

/// Binomial C(L - fixed_prefix, p); throws OverflowError instead of wrapping.
std::uint64_t space_size(const SearchSpace& space);

/// Every configuration, ordered descending on n0, then n1, and so on.
/// Throws ValidationError when the space exceeds `cap`.
std::vector<PoolingConfig> enumerate_configs(const SearchSpace& space,
                                             std::uint64_t cap = kDefaultEnumerationCap);

/// Block counts before each pooling: prefix sums n0, n0+n1, ...
std::vector<int> config_to_positions(const PoolingConfig& config);

/// Inverse of config_to_positions for a network of `total_blocks` blocks.
PoolingConfig positions_to_config(std::span<const int> positions, int total_blocks);

/// Empty when valid; otherwise one human-readable line per violation.
std::vector<std::string> validate_config(const PoolingConfig& config,
                                         const SearchSpace& space);

/// Stage (0-based resolution index) of each block.
std::vector<int> block_stages(const PoolingConfig& config);

std::optional<std::size_t> index_of(std::span<const PoolingConfig> configs,
                                    const PoolingConfig& config);

}  // namespace poolnas
