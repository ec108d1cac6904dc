#pragma once

// Serial reference implementations and test oracles. Everything here is
// written straight from the definitions, independent of the code paths in
// src/, and is linked only by the tests and the benchmark.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hre/runtime.hpp"
#include "hre/types.hpp"

namespace hre::ref {

// --- serial counterparts of the parallel kernels -----------------------------

std::vector<double> confidences_serial(const LogitMatrix& logits, double temperature);
std::vector<std::int32_t> argmax_serial(const LogitMatrix& logits);
double accuracy_serial(const LogitMatrix& logits, std::span<const std::int32_t> labels);
DMatrix forward_serial(const runtime::ToyModel& model, const DMatrix& inputs);
DMatrix attack_serial(const runtime::ToyModel& model, const DMatrix& inputs,
                      std::span<const std::int32_t> labels,
                      const runtime::AttackConfig& config);

// --- oracles ------------------------------------------------------------------

// O(n*m) pairwise Mann-Whitney statistic: wins + half ties
double auroc_pairwise(std::span<const double> id_scores,
                      std::span<const double> ood_scores);

// interval-membership binning of max-softmax confidences
double ece_hand_binned(const LogitMatrix& logits, std::span<const std::int32_t> labels,
                       std::uint32_t bins);

// straight-line property-score formulas
double score_id_formula(double p_id, bool rescale, double lo, double hi);
double score_ds_formula(double p_id, std::span<const double> p_shifts);
double score_adv_formula(double p_adv, double p_id);
double score_cal_formula(double ece_id, std::span<const double> ece_shifts,
                         double ece_max);
double score_ood_formula(std::span<const double> aurocs);
double score_hr_formula(std::span<const double> scores, std::span<const double> weights);

// dense grid search for the NLL-minimizing temperature on a log grid
double grid_search_temperature(const LogitMatrix& logits,
                               std::span<const std::int32_t> labels,
                               std::uint32_t points, double t_min, double t_max);
double mean_nll_serial(const LogitMatrix& logits, std::span<const std::int32_t> labels,
                       double temperature);

// central finite differences of a scalar function
std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::span<const double> x, double step);

// two-pass covariance/variance Pearson correlation
double pearson_direct(std::span<const double> x, std::span<const double> y);

// number of subset samples misclassified by the best of `candidates` random
// sign-corner perturbations (per sample), for attack-strength cross-checks
std::uint32_t corner_search_flips(const runtime::ToyModel& model, const DMatrix& inputs,
                                  std::span<const std::int32_t> labels, double epsilon,
                                  std::uint32_t candidates, std::uint64_t seed);

} // namespace hre::ref
