#include "hre/kernels.hpp"

#include <cmath>

#include "hre/error.hpp"

namespace hre::kernels {
namespace {

std::int32_t row_argmax(std::span<const float> z) {
    std::int32_t best = 0;
    for (std::int32_t j = 1; j < static_cast<std::int32_t>(z.size()); ++j)
        if (z[j] > z[best]) best = j;
    return best;
}

double row_logsumexp(std::span<const float> z, double inv_t) {
    double m = -HUGE_VAL;
    for (float v : z) m = std::max(m, static_cast<double>(v) * inv_t);
    double s = 0.0;
    for (float v : z) s += std::exp(static_cast<double>(v) * inv_t - m);
    return m + std::log(s);
}

} // namespace

std::vector<std::int32_t> batch_argmax(const LogitMatrix& logits) {
    std::vector<std::int32_t> out(logits.rows);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(logits.rows); ++i)
        out[i] = row_argmax(logits.row(static_cast<std::uint32_t>(i)));
    return out;
}

std::vector<double> batch_confidence(const LogitMatrix& logits, double temperature) {
    if (temperature <= 0.0) throw ValueError("temperature must be positive");
    const double inv_t = 1.0 / temperature;
    std::vector<double> out(logits.rows);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(logits.rows); ++i) {
        const auto z = logits.row(static_cast<std::uint32_t>(i));
        const double lse = row_logsumexp(z, inv_t);
        const double zmax = static_cast<double>(z[row_argmax(z)]) * inv_t;
        out[i] = std::exp(zmax - lse);
    }
    return out;
}

std::vector<double> batch_nll(const LogitMatrix& logits,
                              std::span<const std::int32_t> labels,
                              double temperature) {
    if (temperature <= 0.0) throw ValueError("temperature must be positive");
    if (labels.size() != logits.rows)
        throw ShapeMismatch("labels do not match logit rows");
    for (std::int32_t l : labels) {
        if (l == kUnlabeled) throw UnlabeledData("nll needs labeled data");
        if (l < 0 || l >= static_cast<std::int32_t>(logits.cols))
            throw ValueError("label out of range in nll");
    }
    const double inv_t = 1.0 / temperature;
    std::vector<double> out(logits.rows);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(logits.rows); ++i) {
        const auto z = logits.row(static_cast<std::uint32_t>(i));
        const double lse = row_logsumexp(z, inv_t);
        out[i] = lse - static_cast<double>(z[labels[i]]) * inv_t;
    }
    return out;
}

std::vector<double> batch_energy(const LogitMatrix& logits, double temperature) {
    if (temperature <= 0.0) throw ValueError("temperature must be positive");
    const double inv_t = 1.0 / temperature;
    std::vector<double> out(logits.rows);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(logits.rows); ++i)
        out[i] = temperature * row_logsumexp(logits.row(static_cast<std::uint32_t>(i)), inv_t);
    return out;
}

std::vector<double> batch_max_logit(const LogitMatrix& logits) {
    std::vector<double> out(logits.rows);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(logits.rows); ++i) {
        const auto z = logits.row(static_cast<std::uint32_t>(i));
        out[i] = static_cast<double>(z[row_argmax(z)]);
    }
    return out;
}

} // namespace hre::kernels
