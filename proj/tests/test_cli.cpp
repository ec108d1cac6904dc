#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hre/analysis.hpp"
#include "hre/posthoc.hpp"
#include "hre/runtime.hpp"
#include "hre/store.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = "test_tmp_cli";

int run_cli(const std::string& args, const fs::path& log = {}) {
    std::ostringstream cmd;
    cmd << HRE_CLI_PATH << ' ' << args;
    if (!log.empty())
        cmd << " >" << log.string() << " 2>&1";
    else
        cmd << " >/dev/null 2>&1";
    const int status = std::system(cmd.str().c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// generated once, shared by the cases below
struct Fixture {
    fs::path dir = kWork / "fix";
    Fixture() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
        REQUIRE(run_cli("make-fixture --out " + dir.string() + " --seed 1") == 0);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

} // namespace

TEST_CASE("score evaluates the shipped fixture pool") {
    const auto& f = fixture();
    const auto out = kWork / "score_out";
    REQUIRE(run_cli("score --plan " + (f.dir / "plan.json").string() + " --out " +
                    out.string()) == 0);

    const auto table = hre::analysis::MetricTable::load_csv(out / "pool.metrics");
    REQUIRE(table.rows.size() == 3);
    CHECK(table.rows[0].model_id == "advtrain_mlp");
    CHECK(table.rows[1].model_id == "calibrated_mlp");
    CHECK(table.rows[2].model_id == "erm_mlp");
    for (const auto& id : {"erm_mlp", "advtrain_mlp", "calibrated_mlp"})
        CHECK(fs::exists(out / (std::string(id) + ".scorecard")));
}

TEST_CASE("score output is byte-identical across job counts") {
    const auto& f = fixture();
    const auto out1 = kWork / "jobs1";
    const auto out4 = kWork / "jobs4";
    REQUIRE(run_cli("score --plan " + (f.dir / "plan.json").string() + " --out " +
                    out1.string() + " --jobs 1") == 0);
    REQUIRE(run_cli("score --plan " + (f.dir / "plan.json").string() + " --out " +
                    out4.string() + " --jobs 4") == 0);
    CHECK(slurp(out1 / "pool.metrics") == slurp(out4 / "pool.metrics"));
    CHECK(slurp(out1 / "erm_mlp.scorecard") == slurp(out4 / "erm_mlp.scorecard"));
}

TEST_CASE("attack with epsilon zero reports equal clean and adversarial accuracy") {
    const auto& f = fixture();
    const auto report = kWork / "attack_zero.json";
    REQUIRE(run_cli("attack --model " + (f.dir / "erm_mlp" / "model.json").string() +
                    " --data " + (f.dir / "data" / "id_test.feat.hre").string() +
                    " --method pgd --eps 0 --steps 10 --seed 3 --out " +
                    report.string()) == 0);
    const auto doc = json::parse(slurp(report));
    CHECK(doc.at("clean_accuracy").get<double>() ==
          doc.at("adversarial_accuracy").get<double>());
    CHECK(doc.at("n_evaluated").get<int>() == 128);
}

TEST_CASE("attack accepts the fraction epsilon grammar") {
    const auto& f = fixture();
    const auto report = kWork / "attack_frac.json";
    REQUIRE(run_cli("attack --model " + (f.dir / "erm_mlp" / "model.json").string() +
                    " --data " + (f.dir / "data" / "id_test.feat.hre").string() +
                    " --eps 3/255 --out " + report.string()) == 0);
    const auto doc = json::parse(slurp(report));
    CHECK(doc.at("epsilon").get<double>() == doctest::Approx(3.0 / 255.0));
    CHECK(doc.at("adversarial_accuracy").get<double>() <=
          doc.at("clean_accuracy").get<double>());
}

TEST_CASE("train-toy writes a loadable model") {
    const auto& f = fixture();
    const auto model_path = kWork / "toy.model.json";
    REQUIRE(run_cli("train-toy --data " + (f.dir / "data" / "id_val.feat.hre").string() +
                    " --mode erm --arch linear --epochs 10 --lr 0.3 --seed 2 --out " +
                    model_path.string()) == 0);
    const auto model = hre::runtime::ToyModel::load(model_path);
    CHECK(model.kind == hre::runtime::ModelKind::Linear);
    CHECK(model.input_dim == 16);
}

TEST_CASE("calibrate emits the scaler and both cards") {
    const auto& f = fixture();
    const auto out = kWork / "calibrate.json";
    REQUIRE(run_cli("calibrate --run " +
                    (f.dir / "erm_mlp" / "manifest.json").string() + " --out " +
                    out.string()) == 0);
    const auto doc = json::parse(slurp(out));
    CHECK(doc.at("scaler").at("T").get<double>() > 0.0);
    CHECK(doc.at("scaler").at("val_nll_after").get<double>() <=
          doc.at("scaler").at("val_nll_before").get<double>() + 1e-9);
    CHECK(doc.at("pre").at("scores").at("s_hr").is_number());
    CHECK(doc.at("post").at("temperature").at("T").get<double>() > 0.0);
}

TEST_CASE("ensemble search runs on the fixture pool listing") {
    const auto& f = fixture();
    const auto out = kWork / "ensemble.json";
    REQUIRE(run_cli("ensemble --pool " + (f.dir / "pool.list").string() +
                    " --k 2 --trials 5 --seed 4 --out " + out.string()) == 0);
    const auto spec = hre::posthoc::EnsembleSpec::from_json(slurp(out));
    CHECK(spec.member_ids.size() == 2);
    CHECK(spec.weights.size() == 2);
}

TEST_CASE("correlate reports undefined entries on a degenerate table") {
    fs::create_directories(kWork);
    const auto metrics = kWork / "tiny.csv";
    {
        std::ofstream out(metrics);
        out << "model_id,group,s_id,s_ds,s_adv,s_cal,s_ood,s_hr\n";
        out << "a,g,0.5,0.9,0.25,0.8,0.7,0.63\n";
        out << "b,g,0.6,0.8,0.25,0.7,0.9,0.65\n"; // s_adv constant
    }
    const auto out = kWork / "corr.json";
    REQUIRE(run_cli("correlate --metrics " + metrics.string() + " --out " +
                    out.string()) == 0);
    const auto doc = json::parse(slurp(out));
    CHECK(doc.at("pearson_r").at(2).at(0).is_null()); // s_adv row undefined
    CHECK(doc.at("pearson_r").at(0).at(0).get<double>() == 1.0);
    CHECK(doc.at("centered_by").is_null());
}

TEST_CASE("report writes improvement and histogram files") {
    const auto& f = fixture();
    const auto scored = kWork / "score_out"; // produced above; regenerate if missing
    if (!fs::exists(scored / "pool.metrics"))
        REQUIRE(run_cli("score --plan " + (f.dir / "plan.json").string() + " --out " +
                        scored.string()) == 0);
    const auto out = kWork / "report_out";
    REQUIRE(run_cli("report --metrics " + (scored / "pool.metrics").string() +
                    " --baseline baseline --out " + out.string()) == 0);
    const auto improvement = slurp(out / "hr_improvement.csv");
    CHECK(improvement.find("table,group,best_s_hr,baseline_best_s_hr,delta") == 0);
    CHECK(improvement.find("advtrain") != std::string::npos);
    CHECK(improvement.find("calibrated") != std::string::npos);
    const auto histograms = slurp(out / "score_histograms.csv");
    CHECK(histograms.find("metric,group,bin_lo,bin_hi,count") == 0);
    CHECK(histograms.find("s_hr,") != std::string::npos);
}

TEST_CASE("usage errors exit with code 1 and name the flag") {
    fs::create_directories(kWork);
    const auto log = kWork / "usage.log";
    CHECK(run_cli("score --plan p.json --out o --plany nothing", log) == 1);
    CHECK(slurp(log).find("--plany") != std::string::npos);

    CHECK(run_cli("score --out o-only", log) == 1);
    CHECK(slurp(log).find("--plan") != std::string::npos);

    CHECK(run_cli("attack --model missing --data also-missing", log) == 1);
    CHECK(run_cli("frobnicate", log) == 1);
}

TEST_CASE("missing input files exit with code 1") {
    fs::create_directories(kWork);
    CHECK(run_cli("score --plan does-not-exist.json --out " +
                  (kWork / "x").string()) == 1);
    CHECK(run_cli("correlate --metrics does-not-exist.csv --out " +
                  (kWork / "y.json").string()) == 1);
}
