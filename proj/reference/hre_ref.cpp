#include "hre_ref.hpp"

#include <algorithm>
#include <cmath>

#include "hre/error.hpp"
#include "hre/util.hpp"

namespace hre::ref {
namespace {

std::vector<double> softmax_row(std::span<const float> z, double temperature) {
    std::vector<double> p(z.size());
    double m = -HUGE_VAL;
    for (float v : z) m = std::max(m, static_cast<double>(v) / temperature);
    double sum = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        p[j] = std::exp(static_cast<double>(z[j]) / temperature - m);
        sum += p[j];
    }
    for (double& v : p) v /= sum;
    return p;
}

} // namespace

std::vector<double> confidences_serial(const LogitMatrix& logits, double temperature) {
    std::vector<double> out(logits.rows);
    for (std::uint32_t i = 0; i < logits.rows; ++i) {
        const auto p = softmax_row(logits.row(i), temperature);
        out[i] = *std::max_element(p.begin(), p.end());
    }
    return out;
}

std::vector<std::int32_t> argmax_serial(const LogitMatrix& logits) {
    std::vector<std::int32_t> out(logits.rows);
    for (std::uint32_t i = 0; i < logits.rows; ++i) {
        const auto z = logits.row(i);
        std::int32_t best = 0;
        for (std::int32_t j = 1; j < static_cast<std::int32_t>(z.size()); ++j)
            if (z[j] > z[best]) best = j;
        out[i] = best;
    }
    return out;
}

double accuracy_serial(const LogitMatrix& logits, std::span<const std::int32_t> labels) {
    const auto pred = argmax_serial(logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

DMatrix forward_serial(const runtime::ToyModel& model, const DMatrix& inputs) {
    DMatrix out(inputs.rows, model.num_classes);
    for (std::size_t i = 0; i < inputs.rows; ++i) {
        const auto z = model.forward_one(inputs.row(i));
        std::copy(z.begin(), z.end(), out.row(i).begin());
    }
    return out;
}

DMatrix attack_serial(const runtime::ToyModel& model, const DMatrix& inputs,
                      std::span<const std::int32_t> labels,
                      const runtime::AttackConfig& config) {
    // one sample at a time through the public per-sample entry points
    DMatrix out(inputs.rows, inputs.cols);
    for (std::size_t i = 0; i < inputs.rows; ++i) {
        const auto adv = config.method == runtime::AttackConfig::Method::Fgsm
                             ? runtime::fgsm(model, inputs.row(i), labels[i],
                                             config.epsilon)
                             : runtime::pgd(model, inputs.row(i), labels[i], config);
        std::copy(adv.begin(), adv.end(), out.row(i).begin());
    }
    return out;
}

double auroc_pairwise(std::span<const double> id_scores,
                      std::span<const double> ood_scores) {
    double credit = 0.0;
    for (double a : id_scores) {
        for (double b : ood_scores) {
            if (a > b)
                credit += 1.0;
            else if (a == b)
                credit += 0.5;
        }
    }
    return credit / (static_cast<double>(id_scores.size()) *
                     static_cast<double>(ood_scores.size()));
}

double ece_hand_binned(const LogitMatrix& logits, std::span<const std::int32_t> labels,
                       std::uint32_t bins) {
    const std::uint32_t n = logits.rows;
    std::vector<double> conf(n);
    std::vector<bool> correct(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto p = softmax_row(logits.row(i), 1.0);
        conf[i] = *std::max_element(p.begin(), p.end());
        std::int32_t best = 0;
        const auto z = logits.row(i);
        for (std::int32_t j = 1; j < static_cast<std::int32_t>(z.size()); ++j)
            if (z[j] > z[best]) best = j;
        correct[i] = best == labels[i];
    }

    double total = 0.0;
    for (std::uint32_t b = 1; b <= bins; ++b) {
        const double lo = static_cast<double>(b - 1) / bins;
        const double hi = static_cast<double>(b) / bins;
        double conf_sum = 0.0;
        double acc_sum = 0.0;
        std::uint32_t count = 0;
        for (std::uint32_t i = 0; i < n; ++i) {
            const bool member = (b == 1) ? (conf[i] <= hi) : (conf[i] > lo && conf[i] <= hi);
            if (!member) continue;
            ++count;
            conf_sum += conf[i];
            acc_sum += correct[i] ? 1.0 : 0.0;
        }
        if (count == 0) continue;
        total += (static_cast<double>(count) / n) *
                 std::abs(acc_sum / count - conf_sum / count);
    }
    return total;
}

double score_id_formula(double p_id, bool rescale, double lo, double hi) {
    if (!rescale) return p_id;
    const double v = (p_id - lo) / (hi - lo);
    return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

double score_ds_formula(double p_id, std::span<const double> p_shifts) {
    double total = 0.0;
    for (double p : p_shifts) total += p / p_id;
    return total / static_cast<double>(p_shifts.size());
}

double score_adv_formula(double p_adv, double p_id) { return p_adv / p_id; }

double score_cal_formula(double ece_id, std::span<const double> ece_shifts,
                         double ece_max) {
    double total = ece_id;
    for (double e : ece_shifts) total += e;
    const double n = static_cast<double>(ece_shifts.size()) + 1.0;
    return 1.0 - total / (n * ece_max);
}

double score_ood_formula(std::span<const double> aurocs) {
    double total = 0.0;
    for (double a : aurocs) total += a;
    return total / static_cast<double>(aurocs.size());
}

double score_hr_formula(std::span<const double> scores, std::span<const double> weights) {
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) total += weights[i] * scores[i];
    return total;
}

double mean_nll_serial(const LogitMatrix& logits, std::span<const std::int32_t> labels,
                       double temperature) {
    double total = 0.0;
    for (std::uint32_t i = 0; i < logits.rows; ++i) {
        const auto z = logits.row(i);
        double m = -HUGE_VAL;
        for (float v : z) m = std::max(m, static_cast<double>(v) / temperature);
        double s = 0.0;
        for (float v : z) s += std::exp(static_cast<double>(v) / temperature - m);
        const double lse = m + std::log(s);
        total += lse - static_cast<double>(z[labels[i]]) / temperature;
    }
    return total / static_cast<double>(logits.rows);
}

double grid_search_temperature(const LogitMatrix& logits,
                               std::span<const std::int32_t> labels,
                               std::uint32_t points, double t_min, double t_max) {
    const double lo = std::log(t_min);
    const double hi = std::log(t_max);
    double best_t = t_min;
    double best_nll = HUGE_VAL;
    for (std::uint32_t i = 0; i < points; ++i) {
        const double log_t = lo + (hi - lo) * static_cast<double>(i) /
                                     static_cast<double>(points - 1);
        const double t = std::exp(log_t);
        const double nll = mean_nll_serial(logits, labels, t);
        if (nll < best_nll) {
            best_nll = nll;
            best_t = t;
        }
    }
    return best_t;
}

std::vector<double> finite_difference(
    const std::function<double(std::span<const double>)>& f, std::span<const double> x,
    double step) {
    std::vector<double> grad(x.size());
    std::vector<double> probe(x.begin(), x.end());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double keep = probe[j];
        probe[j] = keep + step;
        const double up = f(probe);
        probe[j] = keep - step;
        const double down = f(probe);
        probe[j] = keep;
        grad[j] = (up - down) / (2.0 * step);
    }
    return grad;
}

double pearson_direct(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
    }
    return (cov / n) / (std::sqrt(vx / n) * std::sqrt(vy / n));
}

std::uint32_t corner_search_flips(const runtime::ToyModel& model, const DMatrix& inputs,
                                  std::span<const std::int32_t> labels, double epsilon,
                                  std::uint32_t candidates, std::uint64_t seed) {
    std::uint32_t flips = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : flips)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(inputs.rows); ++i) {
        const auto x = inputs.row(static_cast<std::size_t>(i));
        std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(i));
        std::vector<double> probe(x.size());
        bool flipped = false;
        for (std::uint32_t c = 0; c < candidates && !flipped; ++c) {
            for (std::size_t j = 0; j < x.size(); ++j)
                probe[j] = x[j] + ((rng() & 1u) ? epsilon : -epsilon);
            const auto z = model.forward_one(probe);
            std::int32_t best = 0;
            for (std::int32_t k = 1; k < static_cast<std::int32_t>(z.size()); ++k)
                if (z[k] > z[best]) best = k;
            flipped = best != labels[i];
        }
        if (flipped) ++flips;
    }
    return flips;
}

} // namespace hre::ref
