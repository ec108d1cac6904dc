#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hre/types.hpp"

namespace hre::runtime {

enum class ModelKind { Linear, Mlp };

// Small differentiable classifier used where model access (not just logit
// dumps) is required: input-gradient attacks, ODIN, and toy training.
// linear: logits = W1 x + b1 (W1 is K x d)
// mlp:    logits = W2 relu(W1 x + b1) + b2 (W1 is h x d, W2 is K x h)
struct ToyModel {
    ModelKind kind = ModelKind::Linear;
    std::uint32_t input_dim = 0;
    std::uint32_t hidden_dim = 0; // 0 for linear
    std::uint32_t num_classes = 0;
    std::vector<double> w1, b1, w2, b2;

    std::vector<double> forward_one(std::span<const double> x) const;
    DMatrix forward(const DMatrix& inputs) const; // parallel over rows
    LogitMatrix forward_f32(const DMatrix& inputs) const;

    // same function with logits multiplied by `factor` (scales the last layer)
    ToyModel with_output_scale(double factor) const;

    std::size_t parameter_count() const;
    void validate() const;

    std::string to_json() const;
    static ToyModel from_json(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static ToyModel load(const std::filesystem::path& path);
};

struct AttackConfig {
    enum class Method { Fgsm, Pgd };
    Method method = Method::Pgd;
    double epsilon = 3.0 / 255.0;
    std::uint32_t steps = 10;
    double step_size = 0.0; // <= 0 means epsilon / 4
    bool random_start = true;
    std::uint64_t seed = 1;
    bool clip01 = false; // optional pixel-range clipping, off for feature data

    double effective_step() const { return step_size > 0.0 ? step_size : epsilon / 4.0; }
    void validate() const;
};

// cross-entropy of softmax(f(x)/T) against y
double loss(const ToyModel& model, std::span<const double> x, std::int32_t y,
            double temperature = 1.0);

// exact reverse-mode gradient of the loss above w.r.t. x
std::vector<double> input_gradient(const ToyModel& model, std::span<const double> x,
                                   std::int32_t y, double temperature = 1.0);

// flat parameter gradient in (w1,b1,w2,b2) order, averaged caller-side
std::vector<double> parameter_gradient(const ToyModel& model,
                                       std::span<const double> x, std::int32_t y);

std::vector<double> fgsm(const ToyModel& model, std::span<const double> x,
                         std::int32_t y, double epsilon);
std::vector<double> pgd(const ToyModel& model, std::span<const double> x,
                        std::int32_t y, const AttackConfig& config);

// per-sample seeds derived from config.seed and the row index, so results do
// not depend on thread count
DMatrix attack_batch(const ToyModel& model, const DMatrix& inputs,
                     std::span<const std::int32_t> labels, const AttackConfig& config);

struct Dataset {
    DMatrix inputs;
    std::vector<std::int32_t> labels;
};

struct TrainConfig {
    ModelKind arch = ModelKind::Mlp;
    std::uint32_t hidden_dim = 32;
    std::uint32_t num_classes = 0; // 0 = infer from labels
    enum class Mode { Erm, Adversarial };
    Mode mode = Mode::Erm;
    AttackConfig attack; // used in adversarial mode
    std::uint32_t epochs = 100;
    double lr = 0.1;
    std::uint32_t batch_size = 32;
    std::uint64_t seed = 1;
};

ToyModel train(const Dataset& data, const TrainConfig& config);

struct AdvEval {
    double clean_accuracy = 0.0;
    double adversarial_accuracy = 0.0;
    std::uint32_t n_evaluated = 0;
};

// subsamples to `cap` rows (seeded), attacks each, reports clean and
// adversarial accuracy on the same subset
AdvEval evaluate_adversarial(const ToyModel& model, const Dataset& data,
                             const AttackConfig& config, std::uint32_t cap,
                             std::uint64_t seed);

} // namespace hre::runtime
