#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hre::analysis {

inline constexpr std::array<const char*, 5> kMetricNames{"s_id", "s_ds", "s_adv",
                                                         "s_cal", "s_ood"};

struct MetricRow {
    std::string model_id;
    std::string group;
    double s_id = 0.0;
    double s_ds = 0.0;
    double s_adv = 0.0;
    double s_cal = 0.0;
    double s_ood = 0.0;
    double s_hr = 0.0;

    double metric(std::size_t i) const; // 0..4 per kMetricNames, 5 = s_hr
    double& metric(std::size_t i);
};

struct MetricTable {
    std::vector<MetricRow> rows;

    void validate() const; // unique model ids
    void save_csv(const std::filesystem::path& path) const;
    static MetricTable load_csv(const std::filesystem::path& path);
};

// subtract the per-group mean from every metric column (s_hr included)
MetricTable group_center(const MetricTable& table);

struct Pearson {
    double r = 0.0;
    double r_squared = 0.0;
};

Pearson pearson(std::span<const double> x, std::span<const double> y);

struct CorrelationMatrices {
    std::array<std::array<double, 5>, 5> r{};
    std::array<std::array<double, 5>, 5> r_squared{};
    std::array<std::array<bool, 5>, 5> defined{};
};

CorrelationMatrices correlation_matrix(const MetricTable& table, bool centered);

struct GroupDelta {
    std::string group;
    double best_hr = 0.0;
    double baseline_best_hr = 0.0;
    double delta = 0.0;
};

struct HrImprovement {
    std::vector<std::vector<GroupDelta>> per_table; // one vector per input table
    std::vector<GroupDelta> average; // mean delta over tables containing the group
};

// best-in-group HR minus best baseline HR, per non-baseline group
HrImprovement hr_improvement(std::span<const MetricTable> tables,
                             const std::string& baseline_group);

} // namespace hre::analysis
