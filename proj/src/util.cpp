#include "hre/util.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <numbers>
#include <stdexcept>

#include "hre/error.hpp"

namespace hre {

double rng_normal(std::mt19937_64& rng) {
    // Box-Muller; one value per call keeps the stream position simple
    double u1 = rng_unit(rng);
    double u2 = rng_unit(rng);
    while (u1 <= 0.0) u1 = rng_unit(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::uint32_t> subsample_indices(std::uint32_t n, std::uint32_t cap,
                                             std::uint64_t seed) {
    std::vector<std::uint32_t> idx(n);
    for (std::uint32_t i = 0; i < n; ++i) idx[i] = i;
    if (cap >= n) return idx;

    std::mt19937_64 rng(seed);
    for (std::uint32_t i = 0; i < cap; ++i) {
        const auto j = i + static_cast<std::uint32_t>(rng_below(rng, n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(cap);
    return idx;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

double parse_fraction(const std::string& text) {
    const auto slash = text.find('/');
    try {
        if (slash == std::string::npos) {
            std::size_t pos = 0;
            const double v = std::stod(text, &pos);
            if (pos != text.size()) throw std::invalid_argument(text);
            return v;
        }
        std::size_t pa = 0, pb = 0;
        const std::string num = text.substr(0, slash);
        const std::string den = text.substr(slash + 1);
        const double a = std::stod(num, &pa);
        const double b = std::stod(den, &pb);
        if (pa != num.size() || pb != den.size() || b == 0.0)
            throw std::invalid_argument(text);
        return a / b;
    } catch (const std::exception&) {
        throw ValueError("cannot parse number or fraction: '" + text + "'");
    }
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // prefer the shortest representation that round-trips
    for (int prec = 1; prec <= 16; ++prec) {
        char probe[40];
        std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
        if (std::strtod(probe, nullptr) == v) return probe;
    }
    return buf;
}

} // namespace hre
