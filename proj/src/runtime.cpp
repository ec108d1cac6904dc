#include "hre/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "hre/error.hpp"
#include "hre/util.hpp"

namespace hre::runtime {
namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double logsumexp(std::span<const double> z) {
    double m = -HUGE_VAL;
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

// softmax(z/T) - onehot(y), scaled by 1/T: the gradient of the loss at the
// logit layer
std::vector<double> logit_delta(std::span<const double> logits, std::int32_t y,
                                double temperature) {
    const double inv_t = 1.0 / temperature;
    std::vector<double> scaled(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j) scaled[j] = logits[j] * inv_t;
    const double lse = logsumexp(scaled);
    std::vector<double> delta(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j)
        delta[j] = std::exp(scaled[j] - lse) * inv_t;
    delta[static_cast<std::size_t>(y)] -= inv_t;
    return delta;
}

void check_input(const ToyModel& model, std::span<const double> x) {
    if (x.size() != model.input_dim)
        throw ShapeMismatch("input width " + std::to_string(x.size()) +
                            " != model input_dim " + std::to_string(model.input_dim));
}

void check_label(const ToyModel& model, std::int32_t y) {
    if (y < 0 || y >= static_cast<std::int32_t>(model.num_classes))
        throw ValueError("label out of range for model");
}

} // namespace

void ToyModel::validate() const {
    if (input_dim == 0 || num_classes == 0)
        throw ValueError("model dims must be positive");
    const auto check_finite = [](const std::vector<double>& v, const char* name) {
        for (double x : v)
            if (!std::isfinite(x)) throw ValueError(std::string("non-finite ") + name);
    };
    if (kind == ModelKind::Linear) {
        if (w1.size() != static_cast<std::size_t>(num_classes) * input_dim ||
            b1.size() != num_classes)
            throw ShapeMismatch("linear parameter shapes do not match dims");
    } else {
        if (hidden_dim == 0) throw ValueError("mlp needs hidden_dim > 0");
        if (w1.size() != static_cast<std::size_t>(hidden_dim) * input_dim ||
            b1.size() != hidden_dim ||
            w2.size() != static_cast<std::size_t>(num_classes) * hidden_dim ||
            b2.size() != num_classes)
            throw ShapeMismatch("mlp parameter shapes do not match dims");
    }
    check_finite(w1, "w1");
    check_finite(b1, "b1");
    check_finite(w2, "w2");
    check_finite(b2, "b2");
}

std::vector<double> ToyModel::forward_one(std::span<const double> x) const {
    check_input(*this, x);
    if (kind == ModelKind::Linear) {
        std::vector<double> z(num_classes);
        for (std::uint32_t k = 0; k < num_classes; ++k) {
            double acc = b1[k];
            const double* w = w1.data() + static_cast<std::size_t>(k) * input_dim;
            for (std::uint32_t j = 0; j < input_dim; ++j) acc += w[j] * x[j];
            z[k] = acc;
        }
        return z;
    }
    std::vector<double> hidden(hidden_dim);
    for (std::uint32_t h = 0; h < hidden_dim; ++h) {
        double acc = b1[h];
        const double* w = w1.data() + static_cast<std::size_t>(h) * input_dim;
        for (std::uint32_t j = 0; j < input_dim; ++j) acc += w[j] * x[j];
        hidden[h] = acc > 0.0 ? acc : 0.0;
    }
    std::vector<double> z(num_classes);
    for (std::uint32_t k = 0; k < num_classes; ++k) {
        double acc = b2[k];
        const double* w = w2.data() + static_cast<std::size_t>(k) * hidden_dim;
        for (std::uint32_t h = 0; h < hidden_dim; ++h) acc += w[h] * hidden[h];
        z[k] = acc;
    }
    return z;
}

DMatrix ToyModel::forward(const DMatrix& inputs) const {
    if (inputs.cols != input_dim)
        throw ShapeMismatch("input width does not match model");
    DMatrix out(inputs.rows, num_classes);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(inputs.rows); ++i) {
        const auto z = forward_one(inputs.row(static_cast<std::size_t>(i)));
        std::copy(z.begin(), z.end(), out.row(static_cast<std::size_t>(i)).begin());
    }
    return out;
}

LogitMatrix ToyModel::forward_f32(const DMatrix& inputs) const {
    const DMatrix z = forward(inputs);
    LogitMatrix out(static_cast<std::uint32_t>(z.rows), static_cast<std::uint32_t>(z.cols));
    for (std::size_t i = 0; i < z.values.size(); ++i)
        out.values[i] = static_cast<float>(z.values[i]);
    return out;
}

ToyModel ToyModel::with_output_scale(double factor) const {
    ToyModel m = *this;
    if (kind == ModelKind::Linear) {
        for (double& v : m.w1) v *= factor;
        for (double& v : m.b1) v *= factor;
    } else {
        for (double& v : m.w2) v *= factor;
        for (double& v : m.b2) v *= factor;
    }
    return m;
}

std::size_t ToyModel::parameter_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
}

void AttackConfig::validate() const {
    if (epsilon < 0.0) throw ValueError("epsilon must be >= 0");
    if (steps < 1) throw ValueError("attack steps must be >= 1");
    if (step_size < 0.0) throw ValueError("step_size must be positive when set");
}

double loss(const ToyModel& model, std::span<const double> x, std::int32_t y,
            double temperature) {
    check_label(model, y);
    if (temperature <= 0.0) throw ValueError("temperature must be positive");
    const auto z = model.forward_one(x);
    std::vector<double> scaled(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) scaled[j] = z[j] / temperature;
    return logsumexp(scaled) - scaled[static_cast<std::size_t>(y)];
}

std::vector<double> input_gradient(const ToyModel& model, std::span<const double> x,
                                   std::int32_t y, double temperature) {
    check_input(model, x);
    check_label(model, y);
    if (temperature <= 0.0) throw ValueError("temperature must be positive");

    const auto z = model.forward_one(x);
    const auto delta = logit_delta(z, y, temperature);

    std::vector<double> grad(model.input_dim, 0.0);
    if (model.kind == ModelKind::Linear) {
        for (std::uint32_t k = 0; k < model.num_classes; ++k) {
            const double* w = model.w1.data() + static_cast<std::size_t>(k) * model.input_dim;
            for (std::uint32_t j = 0; j < model.input_dim; ++j)
                grad[j] += delta[k] * w[j];
        }
        return grad;
    }

    // recompute pre-activations for the relu mask
    std::vector<double> pre(model.hidden_dim);
    for (std::uint32_t h = 0; h < model.hidden_dim; ++h) {
        double acc = model.b1[h];
        const double* w = model.w1.data() + static_cast<std::size_t>(h) * model.input_dim;
        for (std::uint32_t j = 0; j < model.input_dim; ++j) acc += w[j] * x[j];
        pre[h] = acc;
    }
    std::vector<double> delta1(model.hidden_dim, 0.0);
    for (std::uint32_t h = 0; h < model.hidden_dim; ++h) {
        if (pre[h] <= 0.0) continue; // subgradient 0 at the kink
        double acc = 0.0;
        for (std::uint32_t k = 0; k < model.num_classes; ++k)
            acc += model.w2[static_cast<std::size_t>(k) * model.hidden_dim + h] * delta[k];
        delta1[h] = acc;
    }
    for (std::uint32_t h = 0; h < model.hidden_dim; ++h) {
        if (delta1[h] == 0.0) continue;
        const double* w = model.w1.data() + static_cast<std::size_t>(h) * model.input_dim;
        for (std::uint32_t j = 0; j < model.input_dim; ++j)
            grad[j] += delta1[h] * w[j];
    }
    return grad;
}

std::vector<double> parameter_gradient(const ToyModel& model,
                                       std::span<const double> x, std::int32_t y) {
    check_input(model, x);
    check_label(model, y);
    const auto z = model.forward_one(x);
    const auto delta = logit_delta(z, y, 1.0);

    std::vector<double> grad(model.parameter_count(), 0.0);
    if (model.kind == ModelKind::Linear) {
        double* dw1 = grad.data();
        double* db1 = grad.data() + model.w1.size();
        for (std::uint32_t k = 0; k < model.num_classes; ++k) {
            for (std::uint32_t j = 0; j < model.input_dim; ++j)
                dw1[static_cast<std::size_t>(k) * model.input_dim + j] = delta[k] * x[j];
            db1[k] = delta[k];
        }
        return grad;
    }

    std::vector<double> pre(model.hidden_dim);
    std::vector<double> hidden(model.hidden_dim);
    for (std::uint32_t h = 0; h < model.hidden_dim; ++h) {
        double acc = model.b1[h];
        const double* w = model.w1.data() + static_cast<std::size_t>(h) * model.input_dim;
        for (std::uint32_t j = 0; j < model.input_dim; ++j) acc += w[j] * x[j];
        pre[h] = acc;
        hidden[h] = acc > 0.0 ? acc : 0.0;
    }

    double* dw1 = grad.data();
    double* db1 = dw1 + model.w1.size();
    double* dw2 = db1 + model.b1.size();
    double* db2 = dw2 + model.w2.size();

    for (std::uint32_t k = 0; k < model.num_classes; ++k) {
        for (std::uint32_t h = 0; h < model.hidden_dim; ++h)
            dw2[static_cast<std::size_t>(k) * model.hidden_dim + h] = delta[k] * hidden[h];
        db2[k] = delta[k];
    }
    for (std::uint32_t h = 0; h < model.hidden_dim; ++h) {
        if (pre[h] <= 0.0) continue;
        double d1 = 0.0;
        for (std::uint32_t k = 0; k < model.num_classes; ++k)
            d1 += model.w2[static_cast<std::size_t>(k) * model.hidden_dim + h] * delta[k];
        for (std::uint32_t j = 0; j < model.input_dim; ++j)
            dw1[static_cast<std::size_t>(h) * model.input_dim + j] = d1 * x[j];
        db1[h] = d1;
    }
    return grad;
}

std::vector<double> fgsm(const ToyModel& model, std::span<const double> x,
                         std::int32_t y, double epsilon) {
    if (epsilon < 0.0) throw ValueError("epsilon must be >= 0");
    std::vector<double> out(x.begin(), x.end());
    if (epsilon == 0.0) return out;
    const auto grad = input_gradient(model, x, y);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += epsilon * sign_of(grad[j]);
    return out;
}

std::vector<double> pgd(const ToyModel& model, std::span<const double> x,
                        std::int32_t y, const AttackConfig& config) {
    config.validate();
    std::vector<double> out(x.begin(), x.end());
    if (config.epsilon == 0.0) return out;

    const double eps = config.epsilon;
    const double alpha = config.effective_step();

    // track the perturbation so the ball constraint holds exactly
    std::vector<double> delta(x.size(), 0.0);
    if (config.random_start) {
        std::mt19937_64 rng(config.seed);
        for (double& d : delta) d = rng_uniform(rng, -eps, eps);
    }
    std::vector<double> cur(x.size());
    for (std::uint32_t step = 0; step < config.steps; ++step) {
        for (std::size_t j = 0; j < x.size(); ++j) cur[j] = x[j] + delta[j];
        const auto grad = input_gradient(model, cur, y);
        for (std::size_t j = 0; j < x.size(); ++j) {
            delta[j] = std::clamp(delta[j] + alpha * sign_of(grad[j]), -eps, eps);
        }
    }
    for (std::size_t j = 0; j < x.size(); ++j) {
        out[j] = x[j] + delta[j];
        if (config.clip01) out[j] = std::clamp(out[j], 0.0, 1.0);
    }
    return out;
}

namespace {

std::vector<double> attack_one(const ToyModel& model, std::span<const double> x,
                               std::int32_t y, const AttackConfig& config) {
    if (config.method == AttackConfig::Method::Fgsm)
        return fgsm(model, x, y, config.epsilon);
    return pgd(model, x, y, config);
}

} // namespace

DMatrix attack_batch(const ToyModel& model, const DMatrix& inputs,
                     std::span<const std::int32_t> labels, const AttackConfig& config) {
    if (labels.size() != inputs.rows)
        throw ShapeMismatch("labels do not match input rows");
    if (inputs.cols != model.input_dim)
        throw ShapeMismatch("input width does not match model");
    for (std::int32_t y : labels)
        if (y < 0 || y >= static_cast<std::int32_t>(model.num_classes))
            throw ValueError("label out of range for model");
    config.validate();
    DMatrix out(inputs.rows, inputs.cols);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(inputs.rows); ++i) {
        AttackConfig per_sample = config;
        per_sample.seed = mix_seed(config.seed, static_cast<std::uint64_t>(i));
        const auto adv = attack_one(model, inputs.row(static_cast<std::size_t>(i)),
                                    labels[i], per_sample);
        std::copy(adv.begin(), adv.end(), out.row(static_cast<std::size_t>(i)).begin());
    }
    return out;
}

namespace {

ToyModel init_model(ModelKind arch, std::uint32_t d, std::uint32_t h, std::uint32_t k,
                    std::mt19937_64& rng) {
    ToyModel m;
    m.kind = arch;
    m.input_dim = d;
    m.hidden_dim = arch == ModelKind::Mlp ? h : 0;
    m.num_classes = k;
    if (arch == ModelKind::Linear) {
        m.w1.resize(static_cast<std::size_t>(k) * d);
        m.b1.assign(k, 0.0);
        const double scale = std::sqrt(1.0 / d);
        for (double& v : m.w1) v = scale * rng_normal(rng);
    } else {
        m.w1.resize(static_cast<std::size_t>(h) * d);
        m.b1.assign(h, 0.0);
        m.w2.resize(static_cast<std::size_t>(k) * h);
        m.b2.assign(k, 0.0);
        const double s1 = std::sqrt(2.0 / d);
        const double s2 = std::sqrt(2.0 / h);
        for (double& v : m.w1) v = s1 * rng_normal(rng);
        for (double& v : m.w2) v = s2 * rng_normal(rng);
    }
    return m;
}

} // namespace

ToyModel train(const Dataset& data, const TrainConfig& config) {
    const std::size_t n = data.inputs.rows;
    if (n == 0 || data.labels.empty()) throw EmptySplit("training data is empty");
    if (data.labels.size() != n) throw ShapeMismatch("labels do not match inputs");

    std::int32_t max_label = 0;
    for (std::int32_t y : data.labels) {
        if (y < 0) throw UnlabeledData("training data must be fully labeled");
        max_label = std::max(max_label, y);
    }
    const std::uint32_t k = config.num_classes > 0
                                ? config.num_classes
                                : static_cast<std::uint32_t>(max_label + 1);
    if (max_label >= static_cast<std::int32_t>(k))
        throw ValueError("label exceeds num_classes");

    std::mt19937_64 rng(config.seed);
    ToyModel model = init_model(config.arch, static_cast<std::uint32_t>(data.inputs.cols),
                                config.hidden_dim, k, rng);
    const std::size_t param_count = model.parameter_count();
    const bool adversarial =
        config.mode == TrainConfig::Mode::Adversarial && config.attack.epsilon > 0.0;

    std::vector<std::uint32_t> order(n);
    DMatrix batch_x;
    std::vector<std::int32_t> batch_y;
    std::vector<double> grad_sum(param_count);
    std::vector<std::vector<double>> per_sample;

    std::uint64_t batch_counter = 0;
    for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::uint32_t i = 0; i < n; ++i) order[i] = i;
        for (std::uint32_t i = 0; i + 1 < n; ++i) {
            const auto j = i + static_cast<std::uint32_t>(rng_below(rng, n - i));
            std::swap(order[i], order[j]);
        }
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t count = std::min<std::size_t>(config.batch_size, n - start);
            batch_x = DMatrix(count, data.inputs.cols);
            batch_y.resize(count);
            for (std::size_t b = 0; b < count; ++b) {
                const auto row = data.inputs.row(order[start + b]);
                std::copy(row.begin(), row.end(), batch_x.row(b).begin());
                batch_y[b] = data.labels[order[start + b]];
            }
            if (adversarial) {
                AttackConfig attack = config.attack;
                attack.seed = mix_seed(config.attack.seed, batch_counter);
                batch_x = attack_batch(model, batch_x, batch_y, attack);
            }
            ++batch_counter;

            per_sample.assign(count, {});
#pragma omp parallel for schedule(static)
            for (std::int64_t b = 0; b < static_cast<std::int64_t>(count); ++b)
                per_sample[b] = parameter_gradient(
                    model, batch_x.row(static_cast<std::size_t>(b)), batch_y[b]);

            std::fill(grad_sum.begin(), grad_sum.end(), 0.0);
            for (std::size_t b = 0; b < count; ++b)
                for (std::size_t p = 0; p < param_count; ++p)
                    grad_sum[p] += per_sample[b][p];

            const double scale = config.lr / static_cast<double>(count);
            std::size_t offset = 0;
            for (auto* block : {&model.w1, &model.b1, &model.w2, &model.b2}) {
                for (double& v : *block) v -= scale * grad_sum[offset++];
            }
        }
    }
    model.validate();
    return model;
}

AdvEval evaluate_adversarial(const ToyModel& model, const Dataset& data,
                             const AttackConfig& config, std::uint32_t cap,
                             std::uint64_t seed) {
    const auto n = static_cast<std::uint32_t>(data.inputs.rows);
    if (n == 0) throw EmptySplit("no samples to attack");
    if (data.labels.size() != n) throw ShapeMismatch("labels do not match inputs");
    if (cap < 1) throw ValueError("cap must be >= 1");
    for (std::int32_t y : data.labels)
        if (y < 0) throw UnlabeledData("adversarial evaluation needs labels");

    const auto idx = subsample_indices(n, cap, seed);
    DMatrix subset(idx.size(), data.inputs.cols);
    std::vector<std::int32_t> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto row = data.inputs.row(idx[i]);
        std::copy(row.begin(), row.end(), subset.row(i).begin());
        labels[i] = data.labels[idx[i]];
    }

    const auto predict = [&](const DMatrix& inputs) {
        const DMatrix z = model.forward(inputs);
        std::int64_t correct = 0;
        for (std::size_t i = 0; i < z.rows; ++i) {
            const auto row = z.row(i);
            std::size_t best = 0;
            for (std::size_t j = 1; j < row.size(); ++j)
                if (row[j] > row[best]) best = j;
            if (static_cast<std::int32_t>(best) == labels[i]) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(z.rows);
    };

    AdvEval result;
    result.n_evaluated = static_cast<std::uint32_t>(idx.size());
    result.clean_accuracy = predict(subset);
    if (config.epsilon == 0.0) {
        result.adversarial_accuracy = result.clean_accuracy;
        return result;
    }
    const DMatrix adv = attack_batch(model, subset, labels, config);
    result.adversarial_accuracy = predict(adv);
    return result;
}

// --- serialization -----------------------------------------------------------

std::string ToyModel::to_json() const {
    nlohmann::json j;
    j["kind"] = kind == ModelKind::Linear ? "linear" : "mlp";
    j["input_dim"] = input_dim;
    j["hidden_dim"] = hidden_dim;
    j["num_classes"] = num_classes;
    j["w1"] = w1;
    j["b1"] = b1;
    j["w2"] = w2;
    j["b2"] = b2;
    return j.dump(2);
}

ToyModel ToyModel::from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        ToyModel m;
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "linear")
            m.kind = ModelKind::Linear;
        else if (kind == "mlp")
            m.kind = ModelKind::Mlp;
        else
            throw FormatError("unknown model kind: " + kind);
        m.input_dim = j.at("input_dim").get<std::uint32_t>();
        m.hidden_dim = j.at("hidden_dim").get<std::uint32_t>();
        m.num_classes = j.at("num_classes").get<std::uint32_t>();
        m.w1 = j.at("w1").get<std::vector<double>>();
        m.b1 = j.at("b1").get<std::vector<double>>();
        m.w2 = j.at("w2").get<std::vector<double>>();
        m.b2 = j.at("b2").get<std::vector<double>>();
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model parse error: ") + e.what());
    }
}

void ToyModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << to_json() << '\n';
}

ToyModel ToyModel::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return from_json(text);
}

} // namespace hre::runtime
