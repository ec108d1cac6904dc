#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hre/types.hpp"

namespace hre::metrics {

struct SplitEvaluation {
    double performance = 0.0; // top-1 accuracy in [0,1]
    double ece = 0.0;         // expected calibration error in [0,1]
    std::uint32_t n_evaluated = 0;
};

struct ScoreConfig {
    std::array<double, 5> weights{0.2, 0.2, 0.2, 0.2, 0.2}; // id, ds, adv, cal, ood
    std::uint32_t ece_bins = 15;
    double ece_max = 0.5;
    std::optional<std::pair<double, double>> id_rescale; // (lo, hi)

    void validate() const;
};

struct DetectorAuroc {
    std::string name;
    double auroc = 0.0;
};

struct TemperatureInfo {
    double temperature = 1.0;
    double val_nll_before = 0.0;
    double val_nll_after = 0.0;
};

struct ScoreCard {
    std::string model_id;
    std::string group;

    double s_id = 0.0;
    double s_ds = 0.0;
    std::optional<double> s_adv; // absent when no adversarial data is available
    double s_cal = 0.0;
    double s_ood = 0.0;
    double s_hr = 0.0;

    std::array<double, 5> weights{};           // requested
    std::array<double, 5> effective_weights{}; // renormalized when s_adv is absent

    double p_id = 0.0;
    std::uint32_t id_n = 0;
    double ece_id = 0.0;
    std::vector<std::string> shift_tags;
    std::vector<double> per_shift_performance;
    std::vector<double> per_shift_ece;
    std::vector<DetectorAuroc> per_detector_auroc;
    std::optional<double> p_adv;
    std::string adv_mode = "skip"; // external_dump | toy_attack | skip

    std::uint32_t ece_bins = 15;
    double ece_max = 0.5;
    std::optional<std::pair<double, double>> id_rescale;
    std::optional<TemperatureInfo> temperature; // set on post-scaling cards

    std::string to_json() const;
    static ScoreCard from_json(const std::string& text);
};

// --- metric kernels ---------------------------------------------------------

// top-1 accuracy; argmax ties break to the lowest class index
double accuracy(const LogitMatrix& logits, std::span<const std::int32_t> labels);

// softmax(z/T) with max subtraction
std::vector<double> softmax(std::span<const double> logits, double temperature);

// equal-width right-closed binning over [0,1]; confidence 0 joins the first bin
double ece(const LogitMatrix& logits, std::span<const std::int32_t> labels,
           std::uint32_t bins);

// Mann-Whitney AUROC with mid-rank ties; ID scores are the positive class
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

// --- property scores --------------------------------------------------------

double score_id(double p_id, const std::optional<std::pair<double, double>>& rescale);
double score_ds(double p_id, std::span<const double> p_shifts);
double score_adv(double p_adv, double p_id);
double score_cal(double ece_id, std::span<const double> ece_shifts, double ece_max);
double score_ood(std::span<const double> aurocs);
double score_hr(std::span<const double, 5> scores, std::span<const double, 5> weights);

} // namespace hre::metrics
