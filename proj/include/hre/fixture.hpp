#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hre::fixture {

// Builds three synthetic evaluation runs over a Gaussian-blob task:
//   erm_mlp        (group "baseline")   plain mini-batch training
//   advtrain_mlp   (group "advtrain")   PGD adversarial training, same budget
//   calibrated_mlp (group "calibrated") trained, then temperature-baked dumps
// Each run gets id/shift/ood/adv splits, raw feature files, a model file and
// a manifest; a ready-to-run plan and pool listing are written alongside.
struct FixtureResult {
    std::filesystem::path plan_path;
    std::filesystem::path pool_list;
    std::vector<std::filesystem::path> manifests;
};

FixtureResult generate(const std::filesystem::path& out_dir, std::uint64_t seed = 1);

} // namespace hre::fixture
