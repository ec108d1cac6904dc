#include "hre/fixture.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "hre/error.hpp"
#include "hre/pipeline.hpp"
#include "hre/posthoc.hpp"
#include "hre/runtime.hpp"
#include "hre/store.hpp"
#include "hre/util.hpp"

namespace hre::fixture {
namespace {

constexpr std::uint32_t kDim = 16;
constexpr std::uint32_t kClasses = 4;
constexpr double kCenterRadius = 0.08;
constexpr double kNoiseSigma = 0.03;
constexpr double kEpsilon = 3.0 / 255.0;

using runtime::Dataset;

std::vector<std::vector<double>> make_centers(std::mt19937_64& rng, double radius) {
    std::vector<std::vector<double>> centers(kClasses, std::vector<double>(kDim));
    for (auto& c : centers) {
        double norm = 0.0;
        for (double& v : c) {
            v = rng_normal(rng);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (double& v : c) v = v / norm * radius;
    }
    return centers;
}

Dataset sample_blobs(const std::vector<std::vector<double>>& centers, double sigma,
                     std::uint32_t n, std::mt19937_64& rng) {
    Dataset data;
    data.inputs = DMatrix(n, kDim);
    data.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto label = static_cast<std::int32_t>(rng_below(rng, centers.size()));
        data.labels[i] = label;
        auto row = data.inputs.row(i);
        for (std::uint32_t j = 0; j < kDim; ++j)
            row[j] = centers[label][j] + sigma * rng_normal(rng);
    }
    return data;
}

void add_uniform_noise(Dataset& data, double magnitude, std::mt19937_64& rng) {
    for (double& v : data.inputs.values) v += rng_uniform(rng, -magnitude, magnitude);
}

std::vector<std::vector<double>> shifted_centers(
    const std::vector<std::vector<double>>& centers, double shift_norm,
    std::mt19937_64& rng) {
    auto out = centers;
    for (auto& c : out) {
        std::vector<double> delta(kDim);
        double norm = 0.0;
        for (double& v : delta) {
            v = rng_normal(rng);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (std::uint32_t j = 0; j < kDim; ++j) c[j] += delta[j] / norm * shift_norm;
    }
    return out;
}

LogitMatrix features_f32(const DMatrix& inputs) {
    LogitMatrix out(static_cast<std::uint32_t>(inputs.rows),
                    static_cast<std::uint32_t>(inputs.cols));
    for (std::size_t i = 0; i < inputs.values.size(); ++i)
        out.values[i] = static_cast<float>(inputs.values[i]);
    return out;
}

struct NamedSplit {
    std::string role;
    Dataset data;
    bool labeled = true;
};

} // namespace

FixtureResult generate(const std::filesystem::path& out_dir, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "data");

    std::mt19937_64 rng(seed);
    const auto centers = make_centers(rng, kCenterRadius);

    std::vector<NamedSplit> splits;
    const auto train = sample_blobs(centers, kNoiseSigma, 2400, rng);
    splits.push_back({"id_val", sample_blobs(centers, kNoiseSigma, 1200, rng)});
    splits.push_back({"id_test", sample_blobs(centers, kNoiseSigma, 2000, rng)});
    splits.push_back(
        {"ds_val", sample_blobs(shifted_centers(centers, 0.02, rng),
                                kNoiseSigma * 1.2, 800, rng)});
    splits.push_back(
        {"ds_test", sample_blobs(shifted_centers(centers, 0.03, rng),
                                 kNoiseSigma * 1.35, 800, rng)});
    {
        auto corrupted = sample_blobs(centers, kNoiseSigma, 800, rng);
        add_uniform_noise(corrupted, 0.02, rng);
        splits.push_back({"ds_c1", std::move(corrupted)});
    }
    {
        // isotropic noise at the blob-shell radius: lands between the class
        // clusters where no class direction dominates
        Dataset noise;
        noise.inputs = DMatrix(600, kDim);
        noise.labels.assign(600, kUnlabeled);
        for (double& v : noise.inputs.values) v = 0.02 * rng_normal(rng);
        splits.push_back({"ood_noise", std::move(noise), false});
    }
    {
        auto other_task = sample_blobs(make_centers(rng, 0.1), kNoiseSigma, 600, rng);
        other_task.labels.assign(other_task.labels.size(), kUnlabeled);
        splits.push_back({"ood_task2", std::move(other_task), false});
    }

    // shared feature files
    for (const auto& split : splits) {
        store::write_split(out_dir / "data" / (split.role + ".feat.hre"),
                           features_f32(split.data.inputs), split.data.labels);
    }

    runtime::AttackConfig attack;
    attack.method = runtime::AttackConfig::Method::Pgd;
    attack.epsilon = kEpsilon;
    attack.steps = 10;
    attack.random_start = true;
    attack.seed = 1;

    struct ModelPlan {
        std::string model_id;
        std::string group;
        runtime::TrainConfig config;
    };
    std::vector<ModelPlan> model_plans;
    {
        runtime::TrainConfig base;
        base.arch = runtime::ModelKind::Mlp;
        base.hidden_dim = 32;
        base.num_classes = kClasses;
        base.epochs = 80;
        base.lr = 0.4;
        base.batch_size = 64;

        ModelPlan erm{"erm_mlp", "baseline", base};
        erm.config.seed = seed + 11;
        model_plans.push_back(erm);

        ModelPlan adv{"advtrain_mlp", "advtrain", base};
        adv.config.mode = runtime::TrainConfig::Mode::Adversarial;
        adv.config.attack = attack;
        adv.config.seed = seed + 22;
        model_plans.push_back(adv);

        ModelPlan cal{"calibrated_mlp", "calibrated", base};
        cal.config.seed = seed + 33;
        model_plans.push_back(cal);
    }

    const auto find_split = [&](const std::string& role) -> const NamedSplit& {
        for (const auto& s : splits)
            if (s.role == role) return s;
        throw ValueError("fixture split missing: " + role);
    };
    const NamedSplit& id_val = find_split("id_val");
    const NamedSplit& id_test = find_split("id_test");

    FixtureResult result;
    for (const auto& mp : model_plans) {
        runtime::ToyModel model = runtime::train(train, mp.config);

        // the "calibrated" run ships dumps with the fitted temperature baked in
        if (mp.model_id == "calibrated_mlp") {
            const auto val_logits = model.forward_f32(id_val.data.inputs);
            const auto scaler =
                posthoc::fit_temperature(val_logits, id_val.data.labels);
            model = model.with_output_scale(1.0 / scaler.temperature);
        }

        const fs::path run_dir = out_dir / mp.model_id;
        fs::create_directories(run_dir);
        model.save(run_dir / "model.json");

        store::Manifest manifest;
        manifest.model_id = mp.model_id;
        manifest.group = mp.group;
        manifest.num_classes = kClasses;
        manifest.model_path = "model.json";

        for (const auto& split : splits) {
            const auto logits = model.forward_f32(split.data.inputs);
            store::write_split(run_dir / (split.role + ".hre"), logits,
                               split.data.labels);
            manifest.splits.push_back({split.role, split.role + ".hre",
                                       "../data/" + split.role + ".feat.hre"});
        }

        // externally-computed adversarial dump over an id_test subset; the
        // subset seed matches the plan default so labels pair up
        {
            const auto idx = subsample_indices(
                static_cast<std::uint32_t>(id_test.data.inputs.rows), 128, 1);
            DMatrix subset(idx.size(), kDim);
            std::vector<std::int32_t> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const auto row = id_test.data.inputs.row(idx[i]);
                std::copy(row.begin(), row.end(), subset.row(i).begin());
                labels[i] = id_test.data.labels[idx[i]];
            }
            const auto adv_inputs = runtime::attack_batch(model, subset, labels, attack);
            store::write_split(run_dir / "adv_id.hre", model.forward_f32(adv_inputs),
                               labels);
            manifest.splits.push_back({"adv_id", "adv_id.hre", ""});
        }

        const fs::path manifest_path = run_dir / "manifest.json";
        store::write_manifest(manifest_path, manifest);
        result.manifests.push_back(manifest_path);
    }

    // pool listing: one manifest path per line, relative to the listing
    result.pool_list = out_dir / "pool.list";
    {
        std::ofstream out(result.pool_list, std::ios::trunc);
        if (!out) throw IoError("cannot write pool listing");
        for (const auto& m : result.manifests)
            out << fs::relative(m, out_dir).string() << '\n';
    }

    pipeline::EvaluationPlan plan;
    for (const auto& m : result.manifests)
        plan.runs.push_back(fs::relative(m, out_dir));
    plan.adv_mode = pipeline::AdvMode::ToyAttack;
    plan.attack = attack;
    plan.temperature = pipeline::TemperatureMode::FitAndReportBoth;
    plan.subsample_seed = 1;
    plan.id_cap = 1024;
    plan.adv_cap = 128;
    result.plan_path = out_dir / "plan.json";
    plan.save(result.plan_path);

    return result;
}

} // namespace hre::fixture
