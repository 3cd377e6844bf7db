#include "poolnas/rng.hpp"

#include "poolnas/error.hpp"

#include <cmath>
#include <numbers>

namespace poolnas {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

Rng Rng::substream(std::uint64_t run_seed, std::string_view purpose) {
    return Rng(splitmix64(run_seed ^ fnv1a64(purpose)));
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
    if (n == 0) throw ValidationError("uniform_index over an empty range");
    // Largest multiple of n representable; values above it are redrawn.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (weights.empty() || !(total > 0.0))
        throw ValidationError("categorical draw needs a positive total weight");
    const double target = uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        acc += weights[i];
        last_positive = i;
        if (target < acc) return i;
    }
    return last_positive;  // rounding left target at the very top
}

}  // namespace poolnas
