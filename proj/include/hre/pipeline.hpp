#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hre/analysis.hpp"
#include "hre/detectors.hpp"
#include "hre/metrics.hpp"
#include "hre/runtime.hpp"
#include "hre/store.hpp"

namespace hre::pipeline {

enum class AdvMode { ExternalDump, ToyAttack, Skip };
enum class TemperatureMode { None, FitAndReportBoth };

struct EvaluationPlan {
    std::vector<std::filesystem::path> runs;
    metrics::ScoreConfig score;
    detectors::DetectorConfig detector_config;
    AdvMode adv_mode = AdvMode::ExternalDump;
    runtime::AttackConfig attack; // toy_attack mode; attack.seed is the attack seed
    TemperatureMode temperature = TemperatureMode::None;
    std::uint64_t subsample_seed = 1;
    std::uint32_t id_cap = 1024;
    std::uint32_t adv_cap = 128;
    std::string id_split = "id_test"; // headline performance split

    void validate() const;
    static EvaluationPlan load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

struct RunCards {
    metrics::ScoreCard pre;
    std::optional<metrics::ScoreCard> post; // present when temperature mode is on

    const metrics::ScoreCard& final_card() const { return post ? *post : pre; }
};

RunCards evaluate_run(const store::ModelRun& run, const EvaluationPlan& plan);

struct RunFailure {
    std::string manifest;
    std::string error;
};

struct PoolResult {
    analysis::MetricTable table; // one row per successful run, ordered by model_id
    std::vector<RunCards> cards; // same order as table rows
    std::vector<RunFailure> failures;
};

// jobs <= 0 leaves the OpenMP default thread count in place
PoolResult evaluate_pool(const EvaluationPlan& plan, int jobs = 0);

} // namespace hre::pipeline
