#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hre/types.hpp"

namespace hre::kernels {

// OpenMP-parallel batch kernels. Each output element depends on one input
// row only, so results are byte-identical for any thread count; callers do
// any floating-point reductions serially over the returned arrays.

// argmax per row, ties to the lowest class index
std::vector<std::int32_t> batch_argmax(const LogitMatrix& logits);

// max softmax(z/T) per row
std::vector<double> batch_confidence(const LogitMatrix& logits, double temperature);

// per-sample cross-entropy of softmax(z/T) against the label
std::vector<double> batch_nll(const LogitMatrix& logits,
                              std::span<const std::int32_t> labels,
                              double temperature);

// T * logsumexp(z/T) per row
std::vector<double> batch_energy(const LogitMatrix& logits, double temperature);

// max raw logit per row
std::vector<double> batch_max_logit(const LogitMatrix& logits);

} // namespace hre::kernels
