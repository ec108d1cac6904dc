#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hre/error.hpp"
#include "hre/metrics.hpp"
#include "hre/posthoc.hpp"
#include "hre/store.hpp"
#include "hre/util.hpp"
#include "hre_ref.hpp"

using namespace hre;
using doctest::Approx;

namespace {

// logits with a controlled miscalibration: sharpened true-class margins so
// the NLL-optimal temperature sits strictly inside the search bracket
void miscalibrated_fixture(std::mt19937_64& rng, std::uint32_t n, std::uint32_t k,
                           double sharpen, LogitMatrix& logits,
                           std::vector<std::int32_t>& labels) {
    logits = LogitMatrix(n, k);
    labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        labels[i] = static_cast<std::int32_t>(rng_below(rng, k));
        for (std::uint32_t j = 0; j < k; ++j)
            logits.at(i, j) = static_cast<float>(rng_normal(rng));
        // most rows lean toward the label; some lean away
        const double lean = rng_unit(rng) < 0.8 ? sharpen : -0.5 * sharpen;
        logits.at(i, static_cast<std::uint32_t>(labels[i])) += static_cast<float>(lean);
    }
}

LogitMatrix matrix_of(std::initializer_list<std::initializer_list<float>> rows) {
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

} // namespace

TEST_CASE("fitted temperature matches a dense log-grid oracle") {
    std::mt19937_64 rng(61);
    for (int it = 0; it < 8; ++it) {
        LogitMatrix logits;
        std::vector<std::int32_t> labels;
        miscalibrated_fixture(rng, 150, 4, 3.0 + it, logits, labels);
        const auto scaler = posthoc::fit_temperature(logits, labels);
        const double grid = ref::grid_search_temperature(logits, labels, 10000,
                                                         posthoc::kTemperatureMin,
                                                         posthoc::kTemperatureMax);
        CHECK(std::abs(std::log(scaler.temperature) - std::log(grid)) < 1e-3);
        CHECK(scaler.val_nll_after <= scaler.val_nll_before + 1e-9);
        CHECK(scaler.val_nll_after ==
              Approx(posthoc::mean_nll(logits, labels, scaler.temperature)).epsilon(1e-12));
    }
}

TEST_CASE("all-correct large-margin logits drive the temperature to the floor") {
    LogitMatrix logits(6, 2);
    std::vector<std::int32_t> labels(6);
    for (std::uint32_t i = 0; i < 6; ++i) {
        logits.at(i, 0) = 8.0f;
        logits.at(i, 1) = -8.0f;
        labels[i] = 0;
    }
    const auto scaler = posthoc::fit_temperature(logits, labels);
    CHECK(scaler.temperature == Approx(posthoc::kTemperatureMin).epsilon(1e-3));
}

TEST_CASE("duplicating every validation sample leaves the fit unchanged") {
    std::mt19937_64 rng(62);
    LogitMatrix logits;
    std::vector<std::int32_t> labels;
    miscalibrated_fixture(rng, 80, 3, 4.0, logits, labels);

    LogitMatrix doubled(160, 3);
    std::vector<std::int32_t> doubled_labels(160);
    for (std::uint32_t rep = 0; rep < 2; ++rep)
        for (std::uint32_t i = 0; i < 80; ++i) {
            const auto src = logits.row(i);
            std::copy(src.begin(), src.end(), doubled.row(rep * 80 + i).begin());
            doubled_labels[rep * 80 + i] = labels[i];
        }

    const auto a = posthoc::fit_temperature(logits, labels);
    const auto b = posthoc::fit_temperature(doubled, doubled_labels);
    CHECK(a.temperature == b.temperature);
}

TEST_CASE("fit_temperature rejects empty and unlabeled input") {
    CHECK_THROWS_AS(posthoc::fit_temperature(LogitMatrix(0, 2), {}), EmptySplit);
    LogitMatrix logits(1, 2);
    CHECK_THROWS_AS(posthoc::fit_temperature(logits, std::vector<std::int32_t>{-1}),
                    UnlabeledData);
}

TEST_CASE("apply_temperature basics") {
    const auto m = matrix_of({{2.0f, 0.0f}});
    const auto half = posthoc::apply_temperature(m, 2.0);
    CHECK(half.at(0, 0) == 1.0f);
    CHECK(half.at(0, 1) == 0.0f);

    const auto same = posthoc::apply_temperature(m, 1.0);
    CHECK(same.values == m.values);
    CHECK_THROWS_AS(posthoc::apply_temperature(m, 0.0), ValueError);

    // argmax never moves under positive scaling
    std::mt19937_64 rng(63);
    LogitMatrix big(60, 5);
    for (float& v : big.values) v = static_cast<float>(3.0 * rng_normal(rng));
    std::vector<std::int32_t> labels(60);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng_below(rng, 5));
    for (double t : {0.01, 0.5, 7.0, 900.0})
        CHECK(metrics::accuracy(big, labels) ==
              metrics::accuracy(posthoc::apply_temperature(big, t), labels));
}

TEST_CASE("ensemble_logits combines members elementwise") {
    const auto z = matrix_of({{1.0f, -2.0f}, {0.5f, 3.0f}});
    auto neg = z;
    for (float& v : neg.values) v = -v;

    SUBCASE("single member with weight one is the identity") {
        const auto out = posthoc::ensemble_logits({&z}, std::vector<double>{1.0});
        CHECK(out.values == z.values);
    }
    SUBCASE("two identical members with half weights reproduce the member") {
        const auto out = posthoc::ensemble_logits({&z, &z}, std::vector<double>{0.5, 0.5});
        CHECK(out.values == z.values);
    }
    SUBCASE("opposite members cancel") {
        const auto out = posthoc::ensemble_logits({&z, &neg}, std::vector<double>{1.0, 1.0});
        for (float v : out.values) CHECK(v == 0.0f);
    }
    SUBCASE("mismatched shapes are rejected") {
        const auto wide = matrix_of({{1.0f, 2.0f, 3.0f}});
        CHECK_THROWS_AS(posthoc::ensemble_logits({&z, &wide}, std::vector<double>{1, 1}),
                        ShapeMismatch);
    }
}

TEST_CASE("single-member weight fitting reproduces temperature scaling") {
    std::mt19937_64 rng(64);
    LogitMatrix logits;
    std::vector<std::int32_t> labels;
    miscalibrated_fixture(rng, 200, 4, 5.0, logits, labels);

    const auto scaler = posthoc::fit_temperature(logits, labels);
    const auto fit = posthoc::fit_ensemble_weights({&logits}, labels);
    REQUIRE(fit.weights.size() == 1);
    CHECK(fit.weights[0] > 0.0);
    CHECK(std::abs(1.0 / fit.weights[0] - scaler.temperature) < 1e-3);
    CHECK(fit.final_loss <= fit.initial_loss + 1e-9);
}

TEST_CASE("a pure-noise member gets no more weight than an informative one") {
    std::mt19937_64 rng(65);
    LogitMatrix informative;
    std::vector<std::int32_t> labels;
    miscalibrated_fixture(rng, 150, 3, 4.0, informative, labels);
    LogitMatrix noise(150, 3);
    for (float& v : noise.values) v = static_cast<float>(rng_normal(rng));

    const auto fit = posthoc::fit_ensemble_weights({&informative, &noise}, labels);
    CHECK(std::abs(fit.weights[1]) <= std::abs(fit.weights[0]));

    // coarse 2-d grid oracle agrees about which member carries the weight,
    // and gradient descent reaches at least the best grid point
    double best_loss = HUGE_VAL;
    std::array<double, 2> best_w{0, 0};
    for (int a = -20; a <= 20; ++a)
        for (int b = -20; b <= 20; ++b) {
            const std::vector<double> w{a * 0.1, b * 0.1};
            const auto combined = posthoc::ensemble_logits({&informative, &noise}, w);
            const double loss = posthoc::mean_nll(combined, labels, 1.0);
            if (loss < best_loss) {
                best_loss = loss;
                best_w = {w[0], w[1]};
            }
        }
    CHECK(std::abs(best_w[1]) <= std::abs(best_w[0]));
    CHECK(fit.final_loss <= best_loss + 1e-6);
}

TEST_CASE("identical members preserve the argmax for the fitted combination") {
    std::mt19937_64 rng(66);
    LogitMatrix logits;
    std::vector<std::int32_t> labels;
    miscalibrated_fixture(rng, 100, 4, 4.0, logits, labels);

    const auto fit = posthoc::fit_ensemble_weights({&logits, &logits, &logits}, labels);
    double total = 0.0;
    for (double w : fit.weights) total += w;
    REQUIRE(total > 0.0);
    const auto combined =
        posthoc::ensemble_logits({&logits, &logits, &logits}, fit.weights);
    CHECK(metrics::accuracy(combined, labels) == metrics::accuracy(logits, labels));
}

TEST_CASE("weight fitting validates inputs") {
    LogitMatrix logits(4, 2);
    std::vector<std::int32_t> labels{0, 1, 0, 1};
    CHECK_THROWS_AS(posthoc::fit_ensemble_weights({}, labels), EmptySplit);
    std::vector<std::int32_t> short_labels{0, 1};
    CHECK_THROWS_AS(posthoc::fit_ensemble_weights({&logits}, short_labels),
                    ShapeMismatch);
    std::vector<std::int32_t> unlabeled{0, -1, 0, 1};
    CHECK_THROWS_AS(posthoc::fit_ensemble_weights({&logits}, unlabeled), UnlabeledData);
}

namespace {

// in-memory pool of runs sharing an id_val dataset
std::vector<store::ModelRun> make_pool(std::mt19937_64& rng, std::size_t size,
                                       std::uint32_t n, std::uint32_t k) {
    std::vector<std::int32_t> labels(n);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng_below(rng, k));

    std::vector<store::ModelRun> pool(size);
    for (std::size_t p = 0; p < size; ++p) {
        auto& run = pool[p];
        run.model_id = "m" + std::to_string(p);
        run.group = "g";
        run.num_classes = k;
        run.id_val.role = "id_val";
        run.id_val.dump.logits = LogitMatrix(n, k);
        run.id_val.dump.labels = labels;
        for (std::uint32_t i = 0; i < n; ++i)
            for (std::uint32_t j = 0; j < k; ++j)
                run.id_val.dump.logits.at(i, j) = static_cast<float>(
                    rng_normal(rng) +
                    (static_cast<std::int32_t>(j) == labels[i] ? 1.5 + 0.5 * p : 0.0));
        run.id_test = run.id_val;
        run.id_test.role = "id_test";
    }
    return pool;
}

} // namespace

TEST_CASE("random ensemble search is deterministic and minimizes over trials") {
    std::mt19937_64 rng(67);
    const auto pool = make_pool(rng, 4, 120, 3);

    const auto a = posthoc::random_ensemble_search(pool, 2, 12, 77);
    const auto b = posthoc::random_ensemble_search(pool, 2, 12, 77);
    CHECK(a.member_ids == b.member_ids);
    CHECK(a.weights == b.weights);
    CHECK(a.val_loss == b.val_loss);

    // replay the trial subsets and verify the reported loss is their minimum
    std::mt19937_64 replay(77);
    double best = HUGE_VAL;
    for (int t = 0; t < 12; ++t) {
        auto subset = subsample_indices(4, 2, replay());
        std::sort(subset.begin(), subset.end());
        std::vector<const LogitMatrix*> members;
        for (auto idx : subset) members.push_back(&pool[idx].id_val.dump.logits);
        const auto fit =
            posthoc::fit_ensemble_weights(members, pool[0].id_val.dump.labels);
        best = std::min(best, fit.final_loss);
    }
    CHECK(a.val_loss == best);

    // more trials can only improve the minimum (same seed prefix)
    const auto longer = posthoc::random_ensemble_search(pool, 2, 30, 77);
    CHECK(longer.val_loss <= a.val_loss);
}

TEST_CASE("k equal to the pool size reduces the search to one fit") {
    std::mt19937_64 rng(68);
    const auto pool = make_pool(rng, 3, 80, 3);
    const auto spec = posthoc::random_ensemble_search(pool, 3, 10, 5);
    CHECK(spec.member_ids == std::vector<std::string>{"m0", "m1", "m2"});

    std::vector<const LogitMatrix*> members;
    for (const auto& run : pool) members.push_back(&run.id_val.dump.logits);
    const auto fit = posthoc::fit_ensemble_weights(members, pool[0].id_val.dump.labels);
    CHECK(spec.weights == fit.weights);
    CHECK(spec.val_loss == fit.final_loss);
}

TEST_CASE("ensemble search input validation") {
    std::mt19937_64 rng(69);
    const auto pool = make_pool(rng, 2, 40, 2);
    CHECK_THROWS_AS(posthoc::random_ensemble_search(pool, 3, 5, 1), PoolTooSmall);
    CHECK_THROWS_AS(posthoc::random_ensemble_search(pool, 0, 5, 1), ValueError);
    CHECK_THROWS_AS(posthoc::random_ensemble_search(pool, 6, 5, 1), ValueError);
    CHECK_THROWS_AS(posthoc::random_ensemble_search(pool, 2, 0, 1), ValueError);
}

TEST_CASE("ensemble spec json round-trips") {
    posthoc::EnsembleSpec spec;
    spec.member_ids = {"a", "b"};
    spec.weights = {0.6, 0.4};
    spec.val_loss = 0.123;
    const auto parsed = posthoc::EnsembleSpec::from_json(spec.to_json());
    CHECK(parsed.member_ids == spec.member_ids);
    CHECK(parsed.weights == spec.weights);
    CHECK(parsed.val_loss == spec.val_loss);
}
