#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace hre {

// Deterministic RNG helpers. std::shuffle and std::*_distribution are
// implementation-defined, so index selection and normal draws are spelled
// out here and depend only on the mt19937_64 stream.

inline std::uint64_t rng_below(std::mt19937_64& rng, std::uint64_t bound) {
    // modulo reduction; bias is negligible for the sizes used here
    return rng() % bound;
}

inline double rng_unit(std::mt19937_64& rng) {
    // 53 random bits -> [0, 1)
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double rng_uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * rng_unit(rng);
}

double rng_normal(std::mt19937_64& rng);

// First `cap` positions of a seeded Fisher-Yates shuffle of 0..n-1
// (sampling without replacement). cap >= n returns the identity order.
std::vector<std::uint32_t> subsample_indices(std::uint32_t n, std::uint32_t cap,
                                             std::uint64_t seed);

std::uint64_t fnv1a(const std::string& s);

// Accepts "a/b" (e.g. "3/255") or a plain decimal.
double parse_fraction(const std::string& text);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

} // namespace hre
