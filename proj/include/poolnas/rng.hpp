#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace poolnas {

/// Portable seeded generator. The engine is std::mt19937_64, whose output
/// sequence is fixed by the C++ standard; every distribution below is
/// implemented here rather than taken from <random>, because the standard
/// distributions differ between library vendors.
///
/// Substreams: the engine seed for purpose P under run seed S is
/// splitmix64(S ^ fnv1a64(P)). Purposes used by the search harness are
/// "config", "model", "noise", "split", "batch", "init" and "data".
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng substream(std::uint64_t run_seed, std::string_view purpose);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n) by rejection; n must be positive.
    std::uint64_t uniform_index(std::uint64_t n);

    /// Standard normal by Box-Muller; consumes exactly two engine outputs.
    double normal();

    /// Index drawn with probability proportional to `weights` (non-negative,
    /// positive sum) by inverse CDF; consumes exactly one engine output.
    std::size_t categorical(std::span<const double> weights);

private:
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace poolnas
