#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hre/types.hpp"

namespace hre::store {

// One logit/label dump. Binary layout (little-endian throughout):
//   magic "HRE1" | u32 n | u32 K | n*K f32 logits (row-major) | n i32 labels
// A label of -1 marks an unlabeled sample. The same container holds raw
// feature matrices (K = feature dimension).
struct SplitDump {
    LogitMatrix logits;
    std::vector<std::int32_t> labels;

    std::uint32_t n() const { return logits.rows; }
    std::uint32_t k() const { return logits.cols; }
    bool fully_unlabeled() const;
    bool has_unlabeled() const;
};

SplitDump load_split(const std::filesystem::path& path);
void write_split(const std::filesystem::path& path, const LogitMatrix& logits,
                 std::span<const std::int32_t> labels);

// Uniform, seed-deterministic subset of at most `cap` rows, pairing kept.
// cap >= n returns the split unchanged.
SplitDump subsample(const SplitDump& split, std::uint32_t cap, std::uint64_t seed);

struct Split {
    std::string role; // id_val | id_test | ds_<tag> | ood_<tag> | adv_id
    std::filesystem::path path;
    SplitDump dump;
    std::optional<LogitMatrix> features; // raw inputs, when the manifest names them
};

struct ModelRun {
    int schema_version = 1;
    std::string model_id;
    std::string group;
    std::uint32_t num_classes = 0;
    Split id_val;
    Split id_test;
    std::vector<Split> shifts; // ds_*, sorted by role
    std::vector<Split> oods;   // ood_*, sorted by role
    std::optional<Split> adv;  // adv_id
    std::optional<std::filesystem::path> model_path; // toy model, when present

    std::size_t shift_count() const { return shifts.size(); }
    std::size_t ood_count() const { return oods.size(); }
};

// Loads and validates a manifest plus every dump it references.
ModelRun load_run(const std::filesystem::path& manifest_path);

// Manifest writer used by the fixture generator and tests.
struct ManifestSplitEntry {
    std::string role;
    std::string path;
    std::string features; // empty = none
};
struct Manifest {
    std::string model_id;
    std::string group;
    std::uint32_t num_classes = 0;
    std::string model_path; // empty = none
    std::vector<ManifestSplitEntry> splits;
};
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

} // namespace hre::store
