#include "mfl/common.hpp"

#include <cmath>
#include <numbers>

namespace mfl {

namespace {

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t CounterRng::bits(std::uint64_t index) const {
    return mix64(mix64(mix64(seed_) ^ stream_) ^ index);
}

double CounterRng::uniform(std::uint64_t index) const {
    return static_cast<double>(bits(index) >> 11) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t index) const {
    // Box-Muller on two derived counters
    double u1 = uniform(2 * index);
    double u2 = uniform(2 * index + 1);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec random_normal_vector(CounterRng& rng, int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.next_normal();
    return v;
}

}  // namespace mfl
