#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace otlm {

using Rng = std::mt19937_64;

// Uniform integer in [0, n). Hand-rolled rejection sampling instead of
// std::uniform_int_distribution, whose output differs across standard
// library implementations; this keeps seeded runs reproducible across
// toolchains, not just within one build.
inline std::uint64_t rng_below(Rng& rng, std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % n);
    std::uint64_t r = rng();
    while (r >= limit) r = rng();
    return r % n;
}

// Fisher-Yates with rng_below, same portability rationale as above.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng_below(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

// Standard normal via Box-Muller (again avoiding distribution objects).
inline double rng_normal(Rng& rng) {
    constexpr double two_pi = 6.283185307179586;
    const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    const double u2 = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

inline double rng_uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

} // namespace otlm
