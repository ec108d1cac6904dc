#include "hre/store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "hre/error.hpp"
#include "hre/util.hpp"

namespace hre::store {
namespace {

constexpr char kMagic[4] = {'H', 'R', 'E', '1'};
constexpr std::size_t kHeaderBytes = 12;

void put_u32(std::vector<char>& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const char* p) {
    const auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])); };
    return b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
}

} // namespace

bool SplitDump::fully_unlabeled() const {
    return std::all_of(labels.begin(), labels.end(),
                       [](std::int32_t l) { return l == kUnlabeled; });
}

bool SplitDump::has_unlabeled() const {
    return std::any_of(labels.begin(), labels.end(),
                       [](std::int32_t l) { return l == kUnlabeled; });
}

SplitDump load_split(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dump: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    if (bytes.size() < kHeaderBytes)
        throw FormatError("dump shorter than header: " + path.string());
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("bad magic in " + path.string());

    const std::uint32_t n = get_u32(bytes.data() + 4);
    const std::uint32_t k = get_u32(bytes.data() + 8);
    const std::size_t expected =
        kHeaderBytes + 4ull * n * k + 4ull * n;
    if (bytes.size() != expected)
        throw FormatError("dump length mismatch in " + path.string() + ": got " +
                          std::to_string(bytes.size()) + ", expected " +
                          std::to_string(expected));

    SplitDump dump;
    dump.logits.rows = n;
    dump.logits.cols = k;
    dump.logits.values.resize(static_cast<std::size_t>(n) * k);
    dump.labels.resize(n);

    const char* p = bytes.data() + kHeaderBytes;
    for (auto& v : dump.logits.values) {
        v = std::bit_cast<float>(get_u32(p));
        p += 4;
        if (!std::isfinite(v))
            throw ValueError("non-finite logit in " + path.string());
    }
    for (auto& l : dump.labels) {
        l = static_cast<std::int32_t>(get_u32(p));
        p += 4;
        if (l < kUnlabeled || l >= static_cast<std::int32_t>(k))
            throw ValueError("label " + std::to_string(l) + " out of range in " +
                             path.string());
    }
    return dump;
}

void write_split(const std::filesystem::path& path, const LogitMatrix& logits,
                 std::span<const std::int32_t> labels) {
    if (labels.size() != logits.rows)
        throw ShapeMismatch("label count " + std::to_string(labels.size()) +
                            " != row count " + std::to_string(logits.rows));
    for (float v : logits.values)
        if (!std::isfinite(v)) throw ValueError("non-finite logit in write_split");
    for (std::int32_t l : labels)
        if (l < kUnlabeled || l >= static_cast<std::int32_t>(logits.cols))
            throw ValueError("label " + std::to_string(l) + " out of range");

    std::vector<char> buf;
    buf.reserve(kHeaderBytes + 4ull * logits.values.size() + 4ull * labels.size());
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, logits.rows);
    put_u32(buf, logits.cols);
    for (float v : logits.values) put_u32(buf, std::bit_cast<std::uint32_t>(v));
    for (std::int32_t l : labels) put_u32(buf, static_cast<std::uint32_t>(l));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

SplitDump subsample(const SplitDump& split, std::uint32_t cap, std::uint64_t seed) {
    if (cap < 1) throw ValueError("subsample cap must be >= 1");
    if (split.n() <= cap) return split;

    const auto idx = subsample_indices(split.n(), cap, seed);
    SplitDump out;
    out.logits.rows = cap;
    out.logits.cols = split.k();
    out.logits.values.resize(static_cast<std::size_t>(cap) * split.k());
    out.labels.resize(cap);
    for (std::uint32_t i = 0; i < cap; ++i) {
        const auto src = split.logits.row(idx[i]);
        std::copy(src.begin(), src.end(), out.logits.row(i).begin());
        out.labels[i] = split.labels[idx[i]];
    }
    return out;
}

namespace {

LogitMatrix load_features(const std::filesystem::path& path) {
    // feature files reuse the dump layout; labels there are ignored
    return load_split(path).logits;
}

bool has_prefix(const std::string& s, const char* prefix) {
    return s.rfind(prefix, 0) == 0;
}

} // namespace

ModelRun load_run(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest: " + manifest_path.string());

    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest parse error in " + manifest_path.string() +
                          ": " + e.what());
    }

    ModelRun run;
    try {
        run.schema_version = doc.at("schema_version").get<int>();
        run.model_id = doc.at("model_id").get<std::string>();
        run.group = doc.at("group").get<std::string>();
        run.num_classes = doc.at("num_classes").get<std::uint32_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest field error in " + manifest_path.string() +
                          ": " + e.what());
    }
    if (run.model_id.empty()) throw FormatError("empty model_id");
    if (run.num_classes == 0) throw FormatError("num_classes must be positive");

    const auto base = manifest_path.parent_path();
    if (doc.contains("model")) {
        run.model_path = base / doc.at("model").get<std::string>();
        if (!std::filesystem::exists(*run.model_path))
            throw IoError("model file missing: " + run.model_path->string());
    }

    if (!doc.contains("splits") || !doc.at("splits").is_array())
        throw FormatError("manifest missing splits array");

    int n_id_val = 0, n_id_test = 0;
    for (const auto& entry : doc.at("splits")) {
        Split split;
        try {
            split.role = entry.at("role").get<std::string>();
            split.path = base / entry.at("path").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("split entry error: " + std::string(e.what()));
        }
        split.dump = load_split(split.path);
        if (entry.contains("features"))
            split.features = load_features(base / entry.at("features").get<std::string>());
        if (split.features && split.features->rows != split.dump.n())
            throw ShapeMismatch("features row count != dump rows for role " + split.role);

        if (split.dump.k() != run.num_classes)
            throw ShapeMismatch("split " + split.role + " has K=" +
                                std::to_string(split.dump.k()) + ", manifest says " +
                                std::to_string(run.num_classes));

        const bool is_ood = has_prefix(split.role, "ood_");
        if (!is_ood && split.role != "adv_id" && split.dump.has_unlabeled())
            throw ValueError("split " + split.role + " contains unlabeled samples");

        if (split.role == "id_val") {
            run.id_val = std::move(split);
            ++n_id_val;
        } else if (split.role == "id_test") {
            run.id_test = std::move(split);
            ++n_id_test;
        } else if (has_prefix(split.role, "ds_")) {
            run.shifts.push_back(std::move(split));
        } else if (is_ood) {
            run.oods.push_back(std::move(split));
        } else if (split.role == "adv_id") {
            if (run.adv) throw FormatError("duplicate adv_id split");
            if (split.dump.n() == 0) throw EmptySplit("adv_id split is empty");
            run.adv = std::move(split);
        } else {
            throw FormatError("unknown split role: " + split.role);
        }
    }

    if (n_id_val != 1) throw MissingSplit("manifest needs exactly one id_val split");
    if (n_id_test != 1) throw MissingSplit("manifest needs exactly one id_test split");
    if (run.shifts.empty()) throw MissingSplit("manifest needs at least one ds_ split");
    if (run.oods.empty()) throw MissingSplit("manifest needs at least one ood_ split");

    // downstream results must not depend on manifest order
    auto by_role = [](const Split& a, const Split& b) { return a.role < b.role; };
    std::sort(run.shifts.begin(), run.shifts.end(), by_role);
    std::sort(run.oods.begin(), run.oods.end(), by_role);

    return run;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    nlohmann::json doc;
    doc["schema_version"] = 1;
    doc["model_id"] = manifest.model_id;
    doc["group"] = manifest.group;
    doc["num_classes"] = manifest.num_classes;
    if (!manifest.model_path.empty()) doc["model"] = manifest.model_path;
    doc["splits"] = nlohmann::json::array();
    for (const auto& s : manifest.splits) {
        nlohmann::json e{{"role", s.role}, {"path", s.path}};
        if (!s.features.empty()) e["features"] = s.features;
        doc["splits"].push_back(e);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << doc.dump(2) << '\n';
}

} // namespace hre::store
