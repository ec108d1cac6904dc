#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hre/store.hpp"
#include "hre/types.hpp"

namespace hre::posthoc {

constexpr double kTemperatureMin = 1e-3;
constexpr double kTemperatureMax = 1e3;

struct TemperatureScaler {
    double temperature = 1.0;
    double val_nll_before = 0.0; // mean NLL at T = 1
    double val_nll_after = 0.0;  // mean NLL at the fitted T
};

// mean cross-entropy of softmax(z/T); serial sum over a parallel per-sample pass
double mean_nll(const LogitMatrix& logits, std::span<const std::int32_t> labels,
                double temperature);

// golden-section search on log T over [log 1e-3, log 1e3], tolerance 1e-6
TemperatureScaler fit_temperature(const LogitMatrix& val_logits,
                                  std::span<const std::int32_t> val_labels);

LogitMatrix apply_temperature(const LogitMatrix& logits, double temperature);

LogitMatrix ensemble_logits(const std::vector<const LogitMatrix*>& members,
                            std::span<const double> weights);

struct WeightFit {
    std::vector<double> weights;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::uint32_t iterations = 0;
};

// unconstrained weights minimizing mean cross-entropy of softmax(sum_j w_j Z_j):
// plain gradient descent from 1/k with backtracking halving, 500 iterations or
// gradient norm < 1e-6
WeightFit fit_ensemble_weights(const std::vector<const LogitMatrix*>& member_val_logits,
                               std::span<const std::int32_t> val_labels);

struct EnsembleSpec {
    std::vector<std::string> member_ids;
    std::vector<double> weights;
    double val_loss = 0.0;

    std::string to_json() const;
    static EnsembleSpec from_json(const std::string& text);
};

// best of `trials` seeded size-k member subsets by fitted validation loss;
// ties resolved toward the lowest trial index
EnsembleSpec random_ensemble_search(std::span<const store::ModelRun> pool,
                                    std::uint32_t k, std::uint32_t trials,
                                    std::uint64_t seed);

} // namespace hre::posthoc
