#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "hre/error.hpp"
#include "hre/store.hpp"
#include "hre/util.hpp"

using namespace hre;
namespace fs = std::filesystem;

namespace {

fs::path test_dir(const std::string& name) {
    const fs::path dir = fs::path("test_tmp_store") / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

LogitMatrix make_logits(std::initializer_list<std::initializer_list<float>> rows) {
    LogitMatrix m(static_cast<std::uint32_t>(rows.size()),
                  static_cast<std::uint32_t>(rows.begin()->size()));
    std::uint32_t i = 0;
    for (const auto& row : rows) {
        std::uint32_t j = 0;
        for (float v : row) m.at(i, j++) = v;
        ++i;
    }
    return m;
}

// writes a full synthetic run; shift/ood counts configurable
std::vector<store::ManifestSplitEntry> write_run_splits(const fs::path& dir,
                                                        std::uint32_t k, int n_ds,
                                                        int n_ood) {
    std::mt19937_64 rng(99);
    std::vector<store::ManifestSplitEntry> entries;
    const auto write_random = [&](const std::string& role, std::uint32_t n,
                                  bool labeled) {
        LogitMatrix m(n, k);
        for (float& v : m.values) v = static_cast<float>(rng_normal(rng));
        std::vector<std::int32_t> labels(n);
        for (auto& l : labels)
            l = labeled ? static_cast<std::int32_t>(rng_below(rng, k)) : kUnlabeled;
        store::write_split(dir / (role + ".hre"), m, labels);
        entries.push_back({role, role + ".hre", ""});
    };
    write_random("id_val", 40, true);
    write_random("id_test", 60, true);
    for (int i = 0; i < n_ds; ++i) write_random("ds_s" + std::to_string(i), 30, true);
    for (int i = 0; i < n_ood; ++i) write_random("ood_o" + std::to_string(i), 20, false);
    return entries;
}

fs::path write_manifest_file(const fs::path& dir,
                             std::vector<store::ManifestSplitEntry> entries,
                             std::uint32_t k = 3) {
    store::Manifest m;
    m.model_id = "m0";
    m.group = "baseline";
    m.num_classes = k;
    m.splits = std::move(entries);
    const auto path = dir / "manifest.json";
    store::write_manifest(path, m);
    return path;
}

} // namespace

TEST_CASE("write then load round-trips bit for bit") {
    const auto dir = test_dir("roundtrip");
    const auto logits = make_logits({{1.25f, -0.5f, 3.0f}, {0.1f, 0.2f, 0.3f}});
    const std::vector<std::int32_t> labels{2, 0};
    store::write_split(dir / "a.hre", logits, labels);

    const auto loaded = store::load_split(dir / "a.hre");
    CHECK(loaded.logits.rows == 2);
    CHECK(loaded.logits.cols == 3);
    CHECK(loaded.logits.values == logits.values);
    CHECK(loaded.labels == labels);
}

TEST_CASE("round-trip identity on random dumps") {
    const auto dir = test_dir("roundtrip_random");
    std::mt19937_64 rng(7);
    for (int it = 0; it < 5; ++it) {
        const auto n = static_cast<std::uint32_t>(1 + rng_below(rng, 50));
        const auto k = static_cast<std::uint32_t>(1 + rng_below(rng, 8));
        LogitMatrix m(n, k);
        for (float& v : m.values) v = static_cast<float>(rng_normal(rng) * 10.0);
        std::vector<std::int32_t> labels(n);
        for (auto& l : labels)
            l = static_cast<std::int32_t>(rng_below(rng, k + 1)) - 1; // includes -1
        store::write_split(dir / "r.hre", m, labels);
        const auto loaded = store::load_split(dir / "r.hre");
        CHECK(loaded.logits.values == m.values);
        CHECK(loaded.labels == labels);
    }
}

TEST_CASE("writing a NaN logit is rejected") {
    const auto dir = test_dir("nan");
    auto logits = make_logits({{1.0f, 2.0f}});
    logits.at(0, 1) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(
        store::write_split(dir / "bad.hre", logits, std::vector<std::int32_t>{0}),
        ValueError);
}

TEST_CASE("n=0 writes a 12-byte file that loads to an empty split") {
    const auto dir = test_dir("empty");
    LogitMatrix empty(0, 5);
    store::write_split(dir / "e.hre", empty, {});
    CHECK(fs::file_size(dir / "e.hre") == 12);
    const auto loaded = store::load_split(dir / "e.hre");
    CHECK(loaded.n() == 0);
    CHECK(loaded.k() == 5);
}

TEST_CASE("length mismatch is a FormatError") {
    const auto dir = test_dir("truncated");
    store::write_split(dir / "t.hre", make_logits({{1.0f, 2.0f}}),
                       std::vector<std::int32_t>{1});
    fs::resize_file(dir / "t.hre", fs::file_size(dir / "t.hre") - 1);
    CHECK_THROWS_AS(store::load_split(dir / "t.hre"), FormatError);
}

TEST_CASE("bad magic is a FormatError") {
    const auto dir = test_dir("magic");
    store::write_split(dir / "m.hre", make_logits({{1.0f}}), std::vector<std::int32_t>{0});
    std::fstream f(dir / "m.hre", std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(store::load_split(dir / "m.hre"), FormatError);
}

TEST_CASE("out-of-range label in a file is a ValueError") {
    const auto dir = test_dir("badlabel");
    store::write_split(dir / "l.hre", make_logits({{1.0f, 2.0f}}),
                       std::vector<std::int32_t>{1});
    // labels start after the 12-byte header and 4*1*2 logit bytes
    std::fstream f(dir / "l.hre", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(12 + 8);
    const char bytes[4] = {7, 0, 0, 0};
    f.write(bytes, 4);
    f.close();
    CHECK_THROWS_AS(store::load_split(dir / "l.hre"), ValueError);
}

TEST_CASE("manifest with 3 ds and 2 ood splits materializes N=3, M=2") {
    const auto dir = test_dir("manifest");
    const auto manifest = write_manifest_file(dir, write_run_splits(dir, 3, 3, 2));
    const auto run = store::load_run(manifest);
    CHECK(run.model_id == "m0");
    CHECK(run.group == "baseline");
    CHECK(run.shift_count() == 3);
    CHECK(run.ood_count() == 2);
    CHECK(run.id_val.dump.n() == 40);
    CHECK(run.id_test.dump.n() == 60);
    CHECK_FALSE(run.adv.has_value());
}

TEST_CASE("missing required splits raise MissingSplit") {
    const auto dir = test_dir("missing");
    auto entries = write_run_splits(dir, 3, 1, 1);
    SUBCASE("no id_val") {
        entries.erase(entries.begin());
        CHECK_THROWS_AS(store::load_run(write_manifest_file(dir, entries)), MissingSplit);
    }
    SUBCASE("no ds split") {
        entries.erase(entries.begin() + 2);
        CHECK_THROWS_AS(store::load_run(write_manifest_file(dir, entries)), MissingSplit);
    }
    SUBCASE("no ood split") {
        entries.pop_back();
        CHECK_THROWS_AS(store::load_run(write_manifest_file(dir, entries)), MissingSplit);
    }
}

TEST_CASE("fully unlabeled ood split is accepted and flagged") {
    const auto dir = test_dir("unlabeled");
    const auto manifest = write_manifest_file(dir, write_run_splits(dir, 3, 1, 1));
    const auto run = store::load_run(manifest);
    REQUIRE(run.ood_count() == 1);
    CHECK(run.oods[0].dump.fully_unlabeled());
}

TEST_CASE("split with the wrong K is a ShapeMismatch") {
    const auto dir = test_dir("kmismatch");
    auto entries = write_run_splits(dir, 3, 1, 1);
    store::write_split(dir / "wide.hre", make_logits({{1.0f, 2.0f, 3.0f, 4.0f}}),
                       std::vector<std::int32_t>{0});
    entries.push_back({"ds_wide", "wide.hre", ""});
    CHECK_THROWS_AS(store::load_run(write_manifest_file(dir, entries)), ShapeMismatch);
}

TEST_CASE("manifest split order does not change the loaded run") {
    const auto dir = test_dir("order");
    auto entries = write_run_splits(dir, 3, 3, 2);
    const auto run_a = store::load_run(write_manifest_file(dir, entries));
    std::reverse(entries.begin(), entries.end());
    const auto run_b = store::load_run(write_manifest_file(dir, entries));
    REQUIRE(run_a.shift_count() == run_b.shift_count());
    for (std::size_t i = 0; i < run_a.shifts.size(); ++i) {
        CHECK(run_a.shifts[i].role == run_b.shifts[i].role);
        CHECK(run_a.shifts[i].dump.logits.values == run_b.shifts[i].dump.logits.values);
    }
    for (std::size_t i = 0; i < run_a.oods.size(); ++i)
        CHECK(run_a.oods[i].role == run_b.oods[i].role);
}

TEST_CASE("subsample caps, preserves pairing and is seed-deterministic") {
    store::SplitDump split;
    split.logits = LogitMatrix(2000, 4);
    split.labels.resize(2000);
    for (std::uint32_t i = 0; i < 2000; ++i) {
        split.labels[i] = static_cast<std::int32_t>(i % 4);
        for (std::uint32_t j = 0; j < 4; ++j)
            split.logits.at(i, j) = static_cast<float>(i * 10 + j);
    }

    const auto a = store::subsample(split, 1024, 7);
    CHECK(a.n() == 1024);
    // pairing: every row encodes its source index in its logits
    for (std::uint32_t i = 0; i < a.n(); ++i) {
        const auto src = static_cast<std::uint32_t>(a.logits.at(i, 0)) / 10;
        CHECK(a.labels[i] == static_cast<std::int32_t>(src % 4));
        CHECK(a.logits.at(i, 3) == static_cast<float>(src * 10 + 3));
    }

    const auto b = store::subsample(split, 1024, 7);
    CHECK(a.logits.values == b.logits.values);
    CHECK(a.labels == b.labels);

    const auto c = store::subsample(split, 1024, 8);
    CHECK(a.logits.values != c.logits.values);

    SUBCASE("cap not binding returns the split unchanged") {
        const auto whole = store::subsample(split, 4000, 7);
        CHECK(whole.logits.values == split.logits.values);
        CHECK(whole.labels == split.labels);
    }
    SUBCASE("cap below 1 is rejected") {
        CHECK_THROWS_AS(store::subsample(split, 0, 7), ValueError);
    }
}

TEST_CASE("subsample selects without replacement") {
    store::SplitDump split;
    split.logits = LogitMatrix(100, 1);
    split.labels.assign(100, 0);
    for (std::uint32_t i = 0; i < 100; ++i)
        split.logits.at(i, 0) = static_cast<float>(i);
    const auto sub = store::subsample(split, 60, 11);
    const std::set<float> seen(sub.logits.values.begin(), sub.logits.values.end());
    CHECK(seen.size() == 60);
}
