#include "hre/posthoc.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "hre/error.hpp"
#include "hre/kernels.hpp"
#include "hre/util.hpp"

namespace hre::posthoc {

double mean_nll(const LogitMatrix& logits, std::span<const std::int32_t> labels,
                double temperature) {
    if (logits.rows == 0) throw EmptySplit("no samples");
    const auto per_sample = kernels::batch_nll(logits, labels, temperature);
    double sum = 0.0;
    for (double v : per_sample) sum += v;
    return sum / static_cast<double>(per_sample.size());
}

TemperatureScaler fit_temperature(const LogitMatrix& val_logits,
                                  std::span<const std::int32_t> val_labels) {
    const auto objective = [&](double log_t) {
        return mean_nll(val_logits, val_labels, std::exp(log_t));
    };

    double a = std::log(kTemperatureMin);
    double b = std::log(kTemperatureMax);
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = objective(c);
    double fd = objective(d);
    while (b - a > 1e-6) {
        // ties shrink from the right: numerically flat stretches (saturated
        // NLL) resolve to the smallest temperature, like the grid scan
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = objective(d);
        }
    }

    TemperatureScaler scaler;
    scaler.temperature = std::exp(0.5 * (a + b));
    scaler.val_nll_before = mean_nll(val_logits, val_labels, 1.0);
    scaler.val_nll_after = mean_nll(val_logits, val_labels, scaler.temperature);
    if (scaler.val_nll_after > scaler.val_nll_before) {
        // only reachable if the NLL is not unimodal in T; never get worse
        scaler.temperature = 1.0;
        scaler.val_nll_after = scaler.val_nll_before;
    }
    return scaler;
}

LogitMatrix apply_temperature(const LogitMatrix& logits, double temperature) {
    if (temperature <= 0.0) throw ValueError("temperature must be positive");
    LogitMatrix out = logits;
    for (float& v : out.values)
        v = static_cast<float>(static_cast<double>(v) / temperature);
    return out;
}

namespace {

void check_members(const std::vector<const LogitMatrix*>& members) {
    if (members.empty()) throw EmptySplit("no ensemble members");
    for (const auto* m : members) {
        if (m == nullptr) throw ValueError("null ensemble member");
        if (m->rows != members[0]->rows || m->cols != members[0]->cols)
            throw ShapeMismatch("ensemble members must share n and K");
    }
    if (members[0]->rows == 0) throw EmptySplit("ensemble members are empty");
}

// combined logits in double for one sample row
void combine_row(const std::vector<const LogitMatrix*>& members,
                 std::span<const double> weights, std::uint32_t row,
                 std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t j = 0; j < members.size(); ++j) {
        const auto z = members[j]->row(row);
        for (std::size_t k = 0; k < z.size(); ++k)
            out[k] += weights[j] * static_cast<double>(z[k]);
    }
}

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

double ensemble_loss(const std::vector<const LogitMatrix*>& members,
                     std::span<const std::int32_t> labels,
                     std::span<const double> weights) {
    const std::uint32_t n = members[0]->rows;
    const std::uint32_t k_classes = members[0]->cols;
    std::vector<double> per_sample(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
        std::vector<double> z(k_classes);
        combine_row(members, weights, static_cast<std::uint32_t>(i), z);
        double m = -HUGE_VAL;
        for (double v : z) m = std::max(m, v);
        double s = 0.0;
        for (double v : z) s += std::exp(v - m);
        per_sample[i] = m + std::log(s) - z[labels[i]];
    }
    double sum = 0.0;
    for (double v : per_sample) sum += v;
    return sum / static_cast<double>(n);
}

LossGrad ensemble_loss_grad(const std::vector<const LogitMatrix*>& members,
                            std::span<const std::int32_t> labels,
                            std::span<const double> weights) {
    const std::uint32_t n = members[0]->rows;
    const std::uint32_t k_classes = members[0]->cols;
    const std::size_t k_members = members.size();

    std::vector<double> per_sample(n);
    std::vector<double> contrib(static_cast<std::size_t>(n) * k_members);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
        std::vector<double> z(k_classes);
        combine_row(members, weights, static_cast<std::uint32_t>(i), z);
        double m = -HUGE_VAL;
        for (double v : z) m = std::max(m, v);
        double s = 0.0;
        for (double v : z) s += std::exp(v - m);
        const double lse = m + std::log(s);
        per_sample[i] = lse - z[labels[i]];
        // d loss_i / d w_j = dot(softmax(z) - onehot(y_i), Z_j[i])
        for (std::size_t j = 0; j < k_members; ++j) {
            const auto zj = members[j]->row(static_cast<std::uint32_t>(i));
            double acc = 0.0;
            for (std::uint32_t c = 0; c < k_classes; ++c) {
                const double p = std::exp(z[c] - lse);
                const double indicator = (static_cast<std::int32_t>(c) == labels[i]) ? 1.0 : 0.0;
                acc += (p - indicator) * static_cast<double>(zj[c]);
            }
            contrib[static_cast<std::size_t>(i) * k_members + j] = acc;
        }
    }

    LossGrad out;
    out.grad.assign(k_members, 0.0);
    double sum = 0.0;
    for (std::uint32_t i = 0; i < n; ++i) {
        sum += per_sample[i];
        for (std::size_t j = 0; j < k_members; ++j)
            out.grad[j] += contrib[static_cast<std::size_t>(i) * k_members + j];
    }
    out.loss = sum / static_cast<double>(n);
    for (double& g : out.grad) g /= static_cast<double>(n);
    return out;
}

} // namespace

LogitMatrix ensemble_logits(const std::vector<const LogitMatrix*>& members,
                            std::span<const double> weights) {
    check_members(members);
    if (weights.size() != members.size())
        throw ShapeMismatch("one weight per member required");
    LogitMatrix out(members[0]->rows, members[0]->cols);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(out.rows); ++i) {
        std::vector<double> z(out.cols);
        combine_row(members, weights, static_cast<std::uint32_t>(i), z);
        auto row = out.row(static_cast<std::uint32_t>(i));
        for (std::size_t k = 0; k < z.size(); ++k) row[k] = static_cast<float>(z[k]);
    }
    return out;
}

WeightFit fit_ensemble_weights(const std::vector<const LogitMatrix*>& member_val_logits,
                               std::span<const std::int32_t> val_labels) {
    check_members(member_val_logits);
    const std::uint32_t n = member_val_logits[0]->rows;
    if (val_labels.size() != n) throw ShapeMismatch("labels do not match member rows");
    for (std::int32_t y : val_labels) {
        if (y == kUnlabeled) throw UnlabeledData("weight fitting needs labels");
        if (y < 0 || y >= static_cast<std::int32_t>(member_val_logits[0]->cols))
            throw ValueError("label out of range");
    }

    const std::size_t k = member_val_logits.size();
    WeightFit fit;
    fit.weights.assign(k, 1.0 / static_cast<double>(k));
    fit.initial_loss = ensemble_loss(member_val_logits, val_labels, fit.weights);

    constexpr std::uint32_t kMaxIterations = 500;
    constexpr double kGradTolerance = 1e-6;
    constexpr double kInitialStep = 1.0;
    constexpr int kMaxHalvings = 60;

    double loss = fit.initial_loss;
    std::vector<double> trial(k);
    for (std::uint32_t it = 0; it < kMaxIterations; ++it) {
        const auto lg = ensemble_loss_grad(member_val_logits, val_labels, fit.weights);
        loss = lg.loss;
        double gnorm = 0.0;
        for (double g : lg.grad) gnorm += g * g;
        gnorm = std::sqrt(gnorm);
        fit.iterations = it;
        if (gnorm < kGradTolerance) break;

        double step = kInitialStep;
        bool accepted = false;
        for (int h = 0; h < kMaxHalvings; ++h) {
            for (std::size_t j = 0; j < k; ++j)
                trial[j] = fit.weights[j] - step * lg.grad[j];
            const double trial_loss = ensemble_loss(member_val_logits, val_labels, trial);
            if (trial_loss <= loss) {
                fit.weights = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break; // no descent step left at this scale
    }
    fit.final_loss = loss;
    return fit;
}

std::string EnsembleSpec::to_json() const {
    nlohmann::json j;
    j["member_ids"] = member_ids;
    j["weights"] = weights;
    j["val_loss"] = val_loss;
    return j.dump(2);
}

EnsembleSpec EnsembleSpec::from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        EnsembleSpec spec;
        spec.member_ids = j.at("member_ids").get<std::vector<std::string>>();
        spec.weights = j.at("weights").get<std::vector<double>>();
        spec.val_loss = j.at("val_loss").get<double>();
        if (spec.member_ids.size() != spec.weights.size() || spec.member_ids.empty())
            throw FormatError("ensemble spec needs matching non-empty ids and weights");
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("ensemble spec parse error: ") + e.what());
    }
}

EnsembleSpec random_ensemble_search(std::span<const store::ModelRun> pool,
                                    std::uint32_t k, std::uint32_t trials,
                                    std::uint64_t seed) {
    if (k < 1 || k > 5) throw ValueError("ensemble size must be between 1 and 5");
    if (trials < 1) throw ValueError("trials must be >= 1");
    if (pool.size() < k)
        throw PoolTooSmall("pool of " + std::to_string(pool.size()) +
                           " cannot form ensembles of " + std::to_string(k));

    const auto& ref_dump = pool[0].id_val.dump;
    for (const auto& run : pool) {
        const auto& dump = run.id_val.dump;
        if (dump.n() != ref_dump.n() || dump.k() != ref_dump.k() ||
            dump.labels != ref_dump.labels)
            throw ShapeMismatch("pool runs must share the id_val dataset");
    }

    // subsets drawn serially so the result is independent of fit parallelism
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::uint32_t>> subsets(trials);
    for (std::uint32_t t = 0; t < trials; ++t) {
        subsets[t] = subsample_indices(static_cast<std::uint32_t>(pool.size()), k, rng());
        std::sort(subsets[t].begin(), subsets[t].end());
    }

    std::vector<WeightFit> fits(trials);
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(trials); ++t) {
        std::vector<const LogitMatrix*> members;
        members.reserve(k);
        for (auto idx : subsets[static_cast<std::size_t>(t)])
            members.push_back(&pool[idx].id_val.dump.logits);
        fits[t] = fit_ensemble_weights(members, pool[0].id_val.dump.labels);
    }

    std::size_t best = 0;
    for (std::size_t t = 1; t < trials; ++t)
        if (fits[t].final_loss < fits[best].final_loss) best = t;

    EnsembleSpec spec;
    for (auto idx : subsets[best]) spec.member_ids.push_back(pool[idx].model_id);
    spec.weights = fits[best].weights;
    spec.val_loss = fits[best].final_loss;
    return spec;
}

} // namespace hre::posthoc
