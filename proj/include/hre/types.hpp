#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hre/error.hpp"

namespace hre {

// Row-major n x K matrix of 32-bit floats, as stored in dump files.
// Also used for raw feature matrices (cols = feature dimension).
struct LogitMatrix {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> values; // rows * cols, row-major

    LogitMatrix() = default;
    LogitMatrix(std::uint32_t n, std::uint32_t k)
        : rows(n), cols(k), values(static_cast<std::size_t>(n) * k, 0.0f) {}

    std::span<const float> row(std::uint32_t i) const {
        return {values.data() + static_cast<std::size_t>(i) * cols, cols};
    }
    std::span<float> row(std::uint32_t i) {
        return {values.data() + static_cast<std::size_t>(i) * cols, cols};
    }
    float& at(std::uint32_t i, std::uint32_t j) {
        return values[static_cast<std::size_t>(i) * cols + j];
    }
    float at(std::uint32_t i, std::uint32_t j) const {
        return values[static_cast<std::size_t>(i) * cols + j];
    }
};

// Row-major double matrix used for model inputs and attack outputs.
struct DMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    DMatrix() = default;
    DMatrix(std::size_t n, std::size_t d) : rows(n), cols(d), values(n * d, 0.0) {}

    std::span<const double> row(std::size_t i) const {
        return {values.data() + i * cols, cols};
    }
    std::span<double> row(std::size_t i) {
        return {values.data() + i * cols, cols};
    }
};

inline DMatrix to_dmatrix(const LogitMatrix& m) {
    DMatrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = static_cast<double>(m.values[i]);
    return out;
}

constexpr std::int32_t kUnlabeled = -1;

} // namespace hre
