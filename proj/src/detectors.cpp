#include "hre/detectors.hpp"

#include <algorithm>
#include <cmath>

#include "hre/error.hpp"
#include "hre/kernels.hpp"
#include "hre/util.hpp"

namespace hre::detectors {

std::string detector_name(Detector d) {
    switch (d) {
        case Detector::MaxSoftmax: return "max_softmax";
        case Detector::MaxLogit: return "max_logit";
        case Detector::Energy: return "energy";
        case Detector::Odin: return "odin";
    }
    throw ValueError("unknown detector");
}

Detector parse_detector(const std::string& name) {
    if (name == "max_softmax") return Detector::MaxSoftmax;
    if (name == "max_logit") return Detector::MaxLogit;
    if (name == "energy") return Detector::Energy;
    if (name == "odin") return Detector::Odin;
    throw ValueError("unknown detector: " + name);
}

void DetectorConfig::validate() const {
    if (enabled.empty()) throw ValueError("at least one detector must be enabled");
    if (odin_temperature <= 0.0 || energy_temperature <= 0.0)
        throw ValueError("detector temperatures must be positive");
    if (odin_epsilon < 0.0) throw ValueError("odin_epsilon must be >= 0");
    if (id_split != "id_val" && id_split != "id_test")
        throw ValueError("id_split must be id_val or id_test");
}

double max_softmax_score(std::span<const double> logits) {
    const auto p = metrics::softmax(logits, 1.0);
    return *std::max_element(p.begin(), p.end());
}

double max_logit_score(std::span<const double> logits) {
    if (logits.empty()) throw EmptySplit("empty logit vector");
    return *std::max_element(logits.begin(), logits.end());
}

double energy_score(std::span<const double> logits, double temperature) {
    if (temperature <= 0.0) throw ValueError("temperature must be positive");
    if (logits.empty()) throw EmptySplit("empty logit vector");
    double m = -HUGE_VAL;
    for (double z : logits) m = std::max(m, z / temperature);
    double s = 0.0;
    for (double z : logits) s += std::exp(z / temperature - m);
    return temperature * (m + std::log(s));
}

namespace {

double odin_score_scaled(const runtime::ToyModel& model, std::span<const double> input,
                         const DetectorConfig& config, double logit_divisor) {
    const double t_eff = config.odin_temperature * logit_divisor;
    const auto z = model.forward_one(input);
    std::int32_t yhat = 0;
    for (std::int32_t j = 1; j < static_cast<std::int32_t>(z.size()); ++j)
        if (z[j] > z[yhat]) yhat = j;

    std::vector<double> x(input.begin(), input.end());
    if (config.odin_epsilon > 0.0) {
        const auto grad = runtime::input_gradient(model, x, yhat, t_eff);
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double s = grad[j] > 0.0 ? 1.0 : (grad[j] < 0.0 ? -1.0 : 0.0);
            x[j] -= config.odin_epsilon * s;
        }
    }
    const auto z2 = model.forward_one(x);
    const auto p = metrics::softmax(z2, t_eff);
    return *std::max_element(p.begin(), p.end());
}

// per-row detector scores for selected rows of a dumped logit matrix
std::vector<double> logit_scores(const LogitMatrix& logits,
                                 const std::vector<std::uint32_t>& rows,
                                 Detector detector, const DetectorConfig& config,
                                 double logit_temperature) {
    LogitMatrix subset;
    const LogitMatrix* src = &logits;
    if (rows.size() != logits.rows) {
        subset.rows = static_cast<std::uint32_t>(rows.size());
        subset.cols = logits.cols;
        subset.values.resize(static_cast<std::size_t>(subset.rows) * subset.cols);
        for (std::uint32_t i = 0; i < subset.rows; ++i) {
            const auto row = logits.row(rows[i]);
            std::copy(row.begin(), row.end(), subset.row(i).begin());
        }
        src = &subset;
    }

    const double t = logit_temperature;
    switch (detector) {
        case Detector::MaxSoftmax:
            return kernels::batch_confidence(*src, t);
        case Detector::MaxLogit: {
            auto out = kernels::batch_max_logit(*src);
            if (t != 1.0)
                for (double& v : out) v /= t;
            return out;
        }
        case Detector::Energy: {
            // energy_Te(z/T) == energy_{T*Te}(z) / T
            auto out = kernels::batch_energy(*src, t * config.energy_temperature);
            if (t != 1.0)
                for (double& v : out) v /= t;
            return out;
        }
        case Detector::Odin:
            throw NoGradientOracle("odin needs a gradient-capable model");
    }
    throw ValueError("unknown detector");
}

std::vector<double> odin_scores(const runtime::ToyModel& model,
                                const LogitMatrix& features,
                                const std::vector<std::uint32_t>& rows,
                                const DetectorConfig& config, double logit_divisor) {
    std::vector<double> out(rows.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(rows.size()); ++i) {
        const auto fr = features.row(rows[static_cast<std::size_t>(i)]);
        std::vector<double> x(fr.size());
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = static_cast<double>(fr[j]);
        out[i] = odin_score_scaled(model, x, config, logit_divisor);
    }
    return out;
}

std::vector<std::uint32_t> all_rows(std::uint32_t n) {
    std::vector<std::uint32_t> rows(n);
    for (std::uint32_t i = 0; i < n; ++i) rows[i] = i;
    return rows;
}

} // namespace

double odin_score(const runtime::ToyModel& model, std::span<const double> input,
                  const DetectorConfig& config) {
    return odin_score_scaled(model, input, config, 1.0);
}

std::vector<metrics::DetectorAuroc> detect(const store::ModelRun& run,
                                           const DetectorConfig& config,
                                           const runtime::ToyModel* model,
                                           double logit_temperature,
                                           std::uint64_t cap_seed) {
    config.validate();
    if (logit_temperature <= 0.0) throw ValueError("logit temperature must be positive");
    if (run.oods.empty()) throw MissingSplit("run has no ood_ splits");

    const store::Split& id = config.id_split == "id_test" ? run.id_test : run.id_val;
    if (id.dump.n() == 0) throw EmptyClass("id split is empty");

    const bool odin_enabled =
        std::find(config.enabled.begin(), config.enabled.end(), Detector::Odin) !=
        config.enabled.end();
    if (odin_enabled) {
        if (model == nullptr)
            throw NoGradientOracle("odin enabled but no model supplied");
        if (!id.features)
            throw NoGradientOracle("odin enabled but id split has no features");
        if (id.features->cols != model->input_dim)
            throw ShapeMismatch("feature width does not match model input_dim");
        for (const auto& ood : run.oods) {
            if (!ood.features)
                throw NoGradientOracle("odin enabled but ood split '" + ood.role +
                                       "' has no features");
            if (ood.features->cols != model->input_dim)
                throw ShapeMismatch("feature width does not match model input_dim");
        }
    }

    // row selection per OOD source; seeding keyed by role tag so the result
    // does not depend on split order
    std::vector<std::vector<std::uint32_t>> ood_rows;
    std::size_t total_ood = 0;
    for (const auto& ood : run.oods) {
        if (config.per_source_cap > 0)
            ood_rows.push_back(subsample_indices(ood.dump.n(), config.per_source_cap,
                                                 cap_seed ^ fnv1a(ood.role)));
        else
            ood_rows.push_back(all_rows(ood.dump.n()));
        total_ood += ood_rows.back().size();
    }
    if (total_ood == 0) throw EmptyClass("ood union is empty");

    const auto id_rows = all_rows(id.dump.n());
    // ODIN perturbs model logits already divided by `logit_temperature`
    const double odin_divisor = logit_temperature;

    std::vector<metrics::DetectorAuroc> out;
    out.reserve(config.enabled.size());
    for (Detector d : config.enabled) {
        std::vector<double> id_scores;
        std::vector<double> ood_scores;
        ood_scores.reserve(total_ood);
        if (d == Detector::Odin) {
            id_scores = odin_scores(*model, *id.features, id_rows, config, odin_divisor);
            for (std::size_t s = 0; s < run.oods.size(); ++s) {
                const auto part = odin_scores(*model, *run.oods[s].features, ood_rows[s],
                                              config, odin_divisor);
                ood_scores.insert(ood_scores.end(), part.begin(), part.end());
            }
        } else {
            id_scores = logit_scores(id.dump.logits, id_rows, d, config, logit_temperature);
            for (std::size_t s = 0; s < run.oods.size(); ++s) {
                const auto part = logit_scores(run.oods[s].dump.logits, ood_rows[s], d,
                                               config, logit_temperature);
                ood_scores.insert(ood_scores.end(), part.begin(), part.end());
            }
        }
        out.push_back({detector_name(d), metrics::auroc(id_scores, ood_scores)});
    }
    return out;
}

} // namespace hre::detectors
