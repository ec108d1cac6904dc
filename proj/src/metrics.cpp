#include "hre/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "hre/error.hpp"
#include "hre/kernels.hpp"

namespace hre::metrics {
namespace {

void require_labeled(std::span<const std::int32_t> labels, std::uint32_t k) {
    if (labels.empty()) throw EmptySplit("no samples");
    for (std::int32_t l : labels) {
        if (l == kUnlabeled) throw UnlabeledData("split contains unlabeled samples");
        if (l < 0 || l >= static_cast<std::int32_t>(k))
            throw ValueError("label " + std::to_string(l) + " out of range");
    }
}

} // namespace

void ScoreConfig::validate() const {
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw WeightError("weights must be nonnegative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw WeightError("weights must sum to 1");
    if (ece_max <= 0.0) throw ValueError("ece_max must be positive");
    if (ece_bins < 1) throw ValueError("ece_bins must be >= 1");
    if (id_rescale) {
        const auto [lo, hi] = *id_rescale;
        if (!(0.0 <= lo && lo < hi && hi <= 1.0))
            throw ValueError("id_rescale needs 0 <= lo < hi <= 1");
    }
}

double accuracy(const LogitMatrix& logits, std::span<const std::int32_t> labels) {
    if (labels.size() != logits.rows)
        throw ShapeMismatch("labels do not match logit rows");
    require_labeled(labels, logits.cols);

    const auto pred = kernels::batch_argmax(logits);
    std::int64_t correct = 0;
#pragma omp parallel for schedule(static) reduction(+ : correct)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(pred.size()); ++i)
        correct += (pred[i] == labels[i]) ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
    if (temperature <= 0.0) throw ValueError("temperature must be positive");
    if (logits.empty()) throw EmptySplit("softmax of empty vector");
    const double inv_t = 1.0 / temperature;
    double m = -HUGE_VAL;
    for (double z : logits) m = std::max(m, z * inv_t);
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        p[j] = std::exp(logits[j] * inv_t - m);
        sum += p[j];
    }
    for (double& v : p) v /= sum;
    return p;
}

double ece(const LogitMatrix& logits, std::span<const std::int32_t> labels,
           std::uint32_t bins) {
    if (labels.size() != logits.rows)
        throw ShapeMismatch("labels do not match logit rows");
    require_labeled(labels, logits.cols);
    if (bins < 1) throw ValueError("bin count must be >= 1");

    const auto conf = kernels::batch_confidence(logits, 1.0);
    const auto pred = kernels::batch_argmax(logits);
    const std::size_t n = conf.size();

    std::vector<std::uint32_t> count(bins, 0);
    std::vector<double> conf_sum(bins, 0.0);
    std::vector<double> acc_sum(bins, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        auto b = static_cast<std::int64_t>(std::ceil(conf[i] * bins));
        b = std::clamp<std::int64_t>(b, 1, bins);
        const auto idx = static_cast<std::size_t>(b - 1);
        count[idx] += 1;
        conf_sum[idx] += conf[i];
        acc_sum[idx] += (pred[i] == labels[i]) ? 1.0 : 0.0;
    }

    double result = 0.0;
    for (std::uint32_t b = 0; b < bins; ++b) {
        if (count[b] == 0) continue;
        const double acc_b = acc_sum[b] / count[b];
        const double conf_b = conf_sum[b] / count[b];
        result += (static_cast<double>(count[b]) / static_cast<double>(n)) *
                  std::abs(acc_b - conf_b);
    }
    return result;
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    if (id_scores.empty() || ood_scores.empty())
        throw EmptyClass("auroc needs samples from both classes");

    const std::size_t n_pos = id_scores.size();
    const std::size_t n_neg = ood_scores.size();
    struct Item {
        double score;
        bool positive;
    };
    std::vector<Item> items;
    items.reserve(n_pos + n_neg);
    for (double s : id_scores) items.push_back({s, true});
    for (double s : ood_scores) items.push_back({s, false});
    std::sort(items.begin(), items.end(),
              [](const Item& a, const Item& b) { return a.score < b.score; });

    // mid-rank ties (1-based ranks)
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < items.size()) {
        std::size_t j = i;
        while (j + 1 < items.size() && items[j + 1].score == items[i].score) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t)
            if (items[t].positive) rank_sum_pos += mid_rank;
        i = j + 1;
    }

    const double u = rank_sum_pos -
                     0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double score_id(double p_id, const std::optional<std::pair<double, double>>& rescale) {
    if (!(0.0 <= p_id && p_id <= 1.0)) throw ValueError("p_id must be in [0,1]");
    if (!rescale) return p_id;
    const auto [lo, hi] = *rescale;
    return std::clamp((p_id - lo) / (hi - lo), 0.0, 1.0);
}

double score_ds(double p_id, std::span<const double> p_shifts) {
    if (p_shifts.empty()) throw EmptyList("no shift performances");
    if (p_id <= 0.0) throw DegeneratePerformance("p_id must be positive");
    double sum = 0.0;
    for (double p : p_shifts) sum += p / p_id;
    return sum / static_cast<double>(p_shifts.size());
}

double score_adv(double p_adv, double p_id) {
    if (p_id <= 0.0) throw DegeneratePerformance("p_id must be positive");
    return p_adv / p_id;
}

double score_cal(double ece_id, std::span<const double> ece_shifts, double ece_max) {
    if (ece_max <= 0.0) throw ValueError("ece_max must be positive");
    double total = ece_id;
    if (ece_id < 0.0 || ece_id > ece_max)
        throw ValueError("ECE_ID outside [0, ece_max]");
    for (double e : ece_shifts) {
        if (e < 0.0 || e > ece_max) throw ValueError("shift ECE outside [0, ece_max]");
        total += e;
    }
    const double n_terms = static_cast<double>(ece_shifts.size() + 1);
    return 1.0 - total / (n_terms * ece_max);
}

double score_ood(std::span<const double> aurocs) {
    if (aurocs.empty()) throw EmptyList("no detector AUROCs");
    double sum = 0.0;
    for (double a : aurocs) sum += a;
    return sum / static_cast<double>(aurocs.size());
}

double score_hr(std::span<const double, 5> scores, std::span<const double, 5> weights) {
    double wsum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw WeightError("weights must be nonnegative");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-9) throw WeightError("weights must sum to 1");
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i) s += weights[i] * scores[i];
    return s;
}

// --- score card serialization ------------------------------------------------

namespace {

nlohmann::json card_to_json(const ScoreCard& c) {
    nlohmann::json j;
    j["model_id"] = c.model_id;
    j["group"] = c.group;
    j["scores"] = {{"s_id", c.s_id},
                   {"s_ds", c.s_ds},
                   {"s_adv", c.s_adv ? nlohmann::json(*c.s_adv) : nlohmann::json()},
                   {"s_cal", c.s_cal},
                   {"s_ood", c.s_ood},
                   {"s_hr", c.s_hr}};
    j["weights"] = c.weights;
    j["effective_weights"] = c.effective_weights;
    j["adv_available"] = c.s_adv.has_value();
    j["adv_mode"] = c.adv_mode;

    nlohmann::json inter;
    inter["p_id"] = c.p_id;
    inter["id_n"] = c.id_n;
    inter["ece_id"] = c.ece_id;
    inter["shifts"] = nlohmann::json::array();
    for (std::size_t i = 0; i < c.shift_tags.size(); ++i)
        inter["shifts"].push_back({{"tag", c.shift_tags[i]},
                                   {"performance", c.per_shift_performance[i]},
                                   {"ece", c.per_shift_ece[i]}});
    inter["detectors"] = nlohmann::json::array();
    for (const auto& d : c.per_detector_auroc)
        inter["detectors"].push_back({{"name", d.name}, {"auroc", d.auroc}});
    inter["p_adv"] = c.p_adv ? nlohmann::json(*c.p_adv) : nlohmann::json();
    j["intermediates"] = inter;

    j["config"] = {{"ece_bins", c.ece_bins}, {"ece_max", c.ece_max}};
    if (c.id_rescale)
        j["config"]["id_rescale"] = {c.id_rescale->first, c.id_rescale->second};
    else
        j["config"]["id_rescale"] = nullptr;

    if (c.temperature)
        j["temperature"] = {{"T", c.temperature->temperature},
                            {"val_nll_before", c.temperature->val_nll_before},
                            {"val_nll_after", c.temperature->val_nll_after}};
    else
        j["temperature"] = nullptr;
    return j;
}

ScoreCard card_from_json(const nlohmann::json& j) {
    ScoreCard c;
    c.model_id = j.at("model_id").get<std::string>();
    c.group = j.at("group").get<std::string>();
    const auto& s = j.at("scores");
    c.s_id = s.at("s_id").get<double>();
    c.s_ds = s.at("s_ds").get<double>();
    if (!s.at("s_adv").is_null()) c.s_adv = s.at("s_adv").get<double>();
    c.s_cal = s.at("s_cal").get<double>();
    c.s_ood = s.at("s_ood").get<double>();
    c.s_hr = s.at("s_hr").get<double>();
    c.weights = j.at("weights").get<std::array<double, 5>>();
    c.effective_weights = j.at("effective_weights").get<std::array<double, 5>>();
    c.adv_mode = j.at("adv_mode").get<std::string>();

    const auto& inter = j.at("intermediates");
    c.p_id = inter.at("p_id").get<double>();
    c.id_n = inter.at("id_n").get<std::uint32_t>();
    c.ece_id = inter.at("ece_id").get<double>();
    for (const auto& e : inter.at("shifts")) {
        c.shift_tags.push_back(e.at("tag").get<std::string>());
        c.per_shift_performance.push_back(e.at("performance").get<double>());
        c.per_shift_ece.push_back(e.at("ece").get<double>());
    }
    for (const auto& e : inter.at("detectors"))
        c.per_detector_auroc.push_back(
            {e.at("name").get<std::string>(), e.at("auroc").get<double>()});
    if (!inter.at("p_adv").is_null()) c.p_adv = inter.at("p_adv").get<double>();

    const auto& cfg = j.at("config");
    c.ece_bins = cfg.at("ece_bins").get<std::uint32_t>();
    c.ece_max = cfg.at("ece_max").get<double>();
    if (!cfg.at("id_rescale").is_null()) {
        const auto arr = cfg.at("id_rescale");
        c.id_rescale = std::make_pair(arr.at(0).get<double>(), arr.at(1).get<double>());
    }
    if (!j.at("temperature").is_null()) {
        TemperatureInfo t;
        t.temperature = j.at("temperature").at("T").get<double>();
        t.val_nll_before = j.at("temperature").at("val_nll_before").get<double>();
        t.val_nll_after = j.at("temperature").at("val_nll_after").get<double>();
        c.temperature = t;
    }
    return c;
}

} // namespace

std::string ScoreCard::to_json() const { return card_to_json(*this).dump(2); }

ScoreCard ScoreCard::from_json(const std::string& text) {
    try {
        return card_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("score card parse error: ") + e.what());
    }
}

} // namespace hre::metrics
