#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "hre/analysis.hpp"
#include "hre/error.hpp"
#include "hre/util.hpp"
#include "hre_ref.hpp"

using namespace hre;
using analysis::MetricRow;
using analysis::MetricTable;
using doctest::Approx;

namespace {

MetricRow row(const std::string& id, const std::string& group,
              std::initializer_list<double> metrics) {
    MetricRow r;
    r.model_id = id;
    r.group = group;
    std::size_t i = 0;
    for (double v : metrics) r.metric(i++) = v;
    return r;
}

MetricTable random_table(std::mt19937_64& rng, std::size_t n_rows,
                         std::size_t n_groups) {
    MetricTable table;
    for (std::size_t i = 0; i < n_rows; ++i) {
        MetricRow r;
        r.model_id = "m" + std::to_string(i);
        r.group = "g" + std::to_string(i % n_groups);
        for (std::size_t m = 0; m < 6; ++m) r.metric(m) = rng_unit(rng);
        table.rows.push_back(r);
    }
    return table;
}

} // namespace

TEST_CASE("group centering on the worked examples") {
    SUBCASE("single group") {
        MetricTable t;
        t.rows = {row("a", "g", {1, 1, 1, 1, 1, 1}), row("b", "g", {2, 2, 2, 2, 2, 2}),
                  row("c", "g", {3, 3, 3, 3, 3, 3})};
        const auto centered = analysis::group_center(t);
        CHECK(centered.rows[0].s_id == Approx(-1.0).epsilon(1e-12));
        CHECK(centered.rows[1].s_id == Approx(0.0).epsilon(1e-12));
        CHECK(centered.rows[2].s_id == Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("two constant groups center to zero") {
        MetricTable t;
        t.rows = {row("a", "g1", {5, 5, 5, 5, 5, 5}), row("b", "g1", {5, 5, 5, 5, 5, 5}),
                  row("c", "g2", {9, 9, 9, 9, 9, 9})};
        for (const auto& r : analysis::group_center(t).rows)
            for (std::size_t m = 0; m < 6; ++m) CHECK(r.metric(m) == 0.0);
    }
    SUBCASE("per-group shifts vanish after centering") {
        std::mt19937_64 rng(71);
        const auto t = random_table(rng, 12, 3);
        auto shifted = t;
        for (auto& r : shifted.rows)
            if (r.group == "g1")
                for (std::size_t m = 0; m < 6; ++m) r.metric(m) += 0.37;
        const auto a = analysis::group_center(t);
        const auto b = analysis::group_center(shifted);
        for (std::size_t i = 0; i < a.rows.size(); ++i)
            for (std::size_t m = 0; m < 6; ++m)
                CHECK(a.rows[i].metric(m) == Approx(b.rows[i].metric(m)).epsilon(1e-12));
    }
    SUBCASE("empty table is rejected") {
        CHECK_THROWS_AS(analysis::group_center(MetricTable{}), EmptyTable);
    }
}

TEST_CASE("group means are zero after centering") {
    std::mt19937_64 rng(72);
    const auto centered = analysis::group_center(random_table(rng, 30, 4));
    for (int g = 0; g < 4; ++g) {
        const std::string group = "g" + std::to_string(g);
        for (std::size_t m = 0; m < 6; ++m) {
            double sum = 0.0;
            std::size_t count = 0;
            for (const auto& r : centered.rows)
                if (r.group == group) {
                    sum += r.metric(m);
                    ++count;
                }
            CHECK(std::abs(sum / static_cast<double>(count)) < 1e-12);
        }
    }
}

TEST_CASE("pearson on the worked examples") {
    const std::vector<double> x{1, 2, 3, 4};
    SUBCASE("y = x") {
        const auto p = analysis::pearson(x, x);
        CHECK(p.r == Approx(1.0).epsilon(1e-12));
        CHECK(p.r_squared == Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("y = -2x + 5") {
        std::vector<double> y;
        for (double v : x) y.push_back(-2.0 * v + 5.0);
        const auto p = analysis::pearson(x, y);
        CHECK(p.r == Approx(-1.0).epsilon(1e-12));
        CHECK(p.r_squared == Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("hand-computed r = 0.8") {
        const std::vector<double> y{1, 3, 2, 4};
        const auto p = analysis::pearson(x, y);
        CHECK(p.r == Approx(0.8).epsilon(1e-12));
        CHECK(p.r_squared == Approx(0.64).epsilon(1e-12));
    }
    SUBCASE("error cases") {
        CHECK_THROWS_AS(analysis::pearson(x, std::vector<double>{1, 2}), LengthMismatch);
        CHECK_THROWS_AS(analysis::pearson(std::vector<double>{3, 3, 3}, std::vector<double>{1, 2, 3}),
                        ZeroVariance);
        CHECK_THROWS_AS(analysis::pearson(std::vector<double>{1, 2, 3}, std::vector<double>{7, 7, 7}),
                        ZeroVariance);
        CHECK_THROWS_AS(analysis::pearson(std::vector<double>{1}, std::vector<double>{1}),
                        ValueError);
    }
}

TEST_CASE("pearson matches the direct covariance oracle") {
    std::mt19937_64 rng(73);
    for (int it = 0; it < 40; ++it) {
        const std::size_t n = 2 + rng_below(rng, 60);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = rng_normal(rng);
            y[i] = 0.6 * x[i] + 0.8 * rng_normal(rng);
        }
        const auto p = analysis::pearson(x, y);
        CHECK(p.r == Approx(ref::pearson_direct(x, y)).epsilon(1e-12));
    }
}

TEST_CASE("pearson affine invariance and sign flip") {
    std::mt19937_64 rng(74);
    for (int it = 0; it < 20; ++it) {
        const std::size_t n = 3 + rng_below(rng, 40);
        std::vector<double> x(n), y(n), ax(n), nx(n);
        const double a = 0.1 + 3.0 * rng_unit(rng);
        const double b = 5.0 * rng_normal(rng);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = rng_normal(rng);
            y[i] = rng_normal(rng);
            ax[i] = a * x[i] + b;
            nx[i] = -a * x[i];
        }
        const auto base = analysis::pearson(x, y);
        CHECK(analysis::pearson(ax, y).r == Approx(base.r).epsilon(1e-12));
        CHECK(analysis::pearson(nx, y).r == Approx(-base.r).epsilon(1e-12));
    }
}

TEST_CASE("correlation matrix diagonal, symmetry and oracle agreement") {
    std::mt19937_64 rng(75);
    const auto table = random_table(rng, 50, 5);
    const auto m = analysis::correlation_matrix(table, false);

    std::array<std::vector<double>, 5> cols;
    for (const auto& r : table.rows)
        for (std::size_t i = 0; i < 5; ++i) cols[i].push_back(r.metric(i));

    for (std::size_t a = 0; a < 5; ++a) {
        CHECK(m.defined[a][a]);
        CHECK(m.r[a][a] == 1.0);
        CHECK(m.r_squared[a][a] == 1.0);
        for (std::size_t b = 0; b < 5; ++b) {
            CHECK(m.r[a][b] == m.r[b][a]);
            if (a != b) {
                CHECK(m.r[a][b] ==
                      Approx(ref::pearson_direct(cols[a], cols[b])).epsilon(1e-12));
                CHECK(m.r_squared[a][b] == Approx(m.r[a][b] * m.r[a][b]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("duplicated metric columns correlate perfectly") {
    std::mt19937_64 rng(76);
    auto table = random_table(rng, 20, 2);
    for (auto& r : table.rows) r.s_cal = r.s_ds; // indices 1 and 3
    const auto m = analysis::correlation_matrix(table, false);
    CHECK(m.r[1][3] == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero-variance columns are undefined, never zero") {
    std::mt19937_64 rng(77);
    auto table = random_table(rng, 10, 2);
    for (auto& r : table.rows) r.s_adv = 0.625;
    const auto m = analysis::correlation_matrix(table, false);
    CHECK_FALSE(m.defined[2][0]);
    CHECK_FALSE(m.defined[2][2]);
    CHECK(std::isnan(m.r[2][0]));
    CHECK(m.defined[0][1]);
}

TEST_CASE("group-centered correlation is invariant to per-group constant shifts") {
    std::mt19937_64 rng(78);
    const auto table = random_table(rng, 24, 3);
    auto shifted = table;
    for (auto& r : shifted.rows) {
        const double c = r.group == "g0" ? 0.2 : (r.group == "g1" ? -0.35 : 0.8);
        for (std::size_t m = 0; m < 6; ++m) r.metric(m) += c * (1.0 + double(m));
    }
    const auto a = analysis::correlation_matrix(table, true);
    const auto b = analysis::correlation_matrix(shifted, true);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            REQUIRE(a.defined[i][j] == b.defined[i][j]);
            if (a.defined[i][j]) {
                CHECK(a.r[i][j] == Approx(b.r[i][j]).epsilon(1e-12));
                CHECK(a.r_squared[i][j] == Approx(b.r_squared[i][j]).epsilon(1e-12));
            }
        }
}

TEST_CASE("hr improvement on the worked examples") {
    MetricTable t;
    t.rows = {row("a", "baseline", {0, 0, 0, 0, 0, 0.70}),
              row("b", "baseline", {0, 0, 0, 0, 0, 0.65}),
              row("c", "finetune", {0, 0, 0, 0, 0, 0.85}),
              row("d", "finetune", {0, 0, 0, 0, 0, 0.60}),
              row("e", "same", {0, 0, 0, 0, 0, 0.70})};
    const auto result = analysis::hr_improvement({&t, 1}, "baseline");
    REQUIRE(result.per_table.size() == 1);
    REQUIRE(result.per_table[0].size() == 2);
    CHECK(result.per_table[0][0].group == "finetune");
    CHECK(result.per_table[0][0].delta == Approx(0.15).epsilon(1e-12));
    CHECK(result.per_table[0][1].group == "same");
    CHECK(result.per_table[0][1].delta == Approx(0.0).epsilon(1e-12));

    CHECK_THROWS_AS(analysis::hr_improvement({&t, 1}, "absent"), MissingGroup);
}

TEST_CASE("hr improvement averages across tables") {
    const auto with_delta = [](double delta) {
        MetricTable t;
        t.rows = {row("a", "baseline", {0, 0, 0, 0, 0, 0.5}),
                  row("b", "x", {0, 0, 0, 0, 0, 0.5 + delta})};
        return t;
    };
    const std::vector<MetricTable> tables{with_delta(0.06), with_delta(0.10),
                                          with_delta(0.08)};
    const auto result = analysis::hr_improvement(tables, "baseline");
    REQUIRE(result.average.size() == 1);
    CHECK(result.average[0].group == "x");
    CHECK(result.average[0].delta == Approx(0.08).epsilon(1e-12));
}

TEST_CASE("hr improvement ignores row order") {
    std::mt19937_64 rng(79);
    auto table = random_table(rng, 15, 3);
    for (auto& r : table.rows)
        if (r.group == "g0") r.group = "baseline";
    auto reversed = table;
    std::reverse(reversed.rows.begin(), reversed.rows.end());
    const auto a = analysis::hr_improvement({&table, 1}, "baseline");
    const auto b = analysis::hr_improvement({&reversed, 1}, "baseline");
    REQUIRE(a.per_table[0].size() == b.per_table[0].size());
    for (std::size_t i = 0; i < a.per_table[0].size(); ++i) {
        CHECK(a.per_table[0][i].group == b.per_table[0][i].group);
        CHECK(a.per_table[0][i].delta == b.per_table[0][i].delta);
    }
}

TEST_CASE("metric table csv round-trips exactly") {
    std::mt19937_64 rng(80);
    const auto table = random_table(rng, 9, 3);
    const std::filesystem::path path = "test_tmp_analysis_table.csv";
    table.save_csv(path);
    const auto loaded = MetricTable::load_csv(path);
    REQUIRE(loaded.rows.size() == table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        CHECK(loaded.rows[i].model_id == table.rows[i].model_id);
        CHECK(loaded.rows[i].group == table.rows[i].group);
        for (std::size_t m = 0; m < 6; ++m)
            CHECK(loaded.rows[i].metric(m) == table.rows[i].metric(m));
    }
    std::filesystem::remove(path);
}

TEST_CASE("metric table validation") {
    MetricTable t;
    t.rows = {row("a", "g", {0, 0, 0, 0, 0, 0}), row("a", "g", {0, 0, 0, 0, 0, 0})};
    CHECK_THROWS_AS(t.validate(), ValueError); // duplicate ids
    t.rows[1].model_id = "b,c";
    CHECK_THROWS_AS(t.validate(), ValueError); // comma in id
}
