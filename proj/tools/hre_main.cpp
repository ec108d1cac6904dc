// hre — reliability scoring for classifier logit dumps.
// Subcommands: score, calibrate, ensemble, attack, train-toy, correlate,
// report, make-fixture. Exit codes: 0 ok, 1 input error, 2 internal failure.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hre/analysis.hpp"
#include "hre/detectors.hpp"
#include "hre/error.hpp"
#include "hre/fixture.hpp"
#include "hre/pipeline.hpp"
#include "hre/posthoc.hpp"
#include "hre/runtime.hpp"
#include "hre/store.hpp"
#include "hre/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw hre::IoError("cannot open for write: " + path.string());
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
}

hre::runtime::Dataset load_dataset(const fs::path& path) {
    const auto dump = hre::store::load_split(path);
    hre::runtime::Dataset data;
    data.inputs = hre::to_dmatrix(dump.logits);
    data.labels = dump.labels;
    return data;
}

int run_score(const fs::path& plan_path, const fs::path& out_dir, int jobs) {
    const auto plan = hre::pipeline::EvaluationPlan::load(plan_path);
    const auto result = hre::pipeline::evaluate_pool(plan, jobs);

    fs::create_directories(out_dir);
    for (const auto& cards : result.cards) {
        json doc;
        doc["pre"] = json::parse(cards.pre.to_json());
        doc["post"] = cards.post ? json::parse(cards.post->to_json()) : json();
        write_text(out_dir / (cards.pre.model_id + ".scorecard"), doc.dump(2));
    }
    result.table.save_csv(out_dir / "pool.metrics");

    if (!result.failures.empty()) {
        std::string lines;
        for (const auto& f : result.failures) {
            std::cerr << "run failed: " << f.manifest << ": " << f.error << '\n';
            lines += f.manifest + ": " + f.error + "\n";
        }
        write_text(out_dir / "failures.txt", lines);
    }
    std::cout << result.cards.size() << " run(s) scored, " << result.failures.size()
              << " failure(s); metrics in " << (out_dir / "pool.metrics").string()
              << '\n';
    if (result.cards.empty()) throw hre::ValueError("every run in the pool failed");
    return 0;
}

int run_calibrate(const fs::path& manifest, const fs::path& out_file) {
    const auto run = hre::store::load_run(manifest);
    const auto scaler = hre::posthoc::fit_temperature(run.id_val.dump.logits,
                                                      run.id_val.dump.labels);

    hre::pipeline::EvaluationPlan plan;
    plan.runs = {manifest};
    plan.temperature = hre::pipeline::TemperatureMode::FitAndReportBoth;
    plan.adv_mode = run.adv ? hre::pipeline::AdvMode::ExternalDump
                            : hre::pipeline::AdvMode::Skip;
    const auto cards = hre::pipeline::evaluate_run(run, plan);

    json doc;
    doc["scaler"] = {{"T", scaler.temperature},
                     {"val_nll_before", scaler.val_nll_before},
                     {"val_nll_after", scaler.val_nll_after}};
    doc["pre"] = json::parse(cards.pre.to_json());
    doc["post"] = json::parse(cards.post->to_json());
    write_text(out_file, doc.dump(2));
    std::cout << "fitted T=" << scaler.temperature << " (val NLL "
              << scaler.val_nll_before << " -> " << scaler.val_nll_after << ")\n";
    return 0;
}

int run_ensemble(const fs::path& pool_file, std::uint32_t k, std::uint32_t trials,
                 std::uint64_t seed, const fs::path& out_file) {
    std::ifstream in(pool_file);
    if (!in) throw hre::IoError("cannot open pool listing: " + pool_file.string());
    std::vector<hre::store::ModelRun> pool;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        pool.push_back(hre::store::load_run(pool_file.parent_path() / line));
    }
    const auto spec = hre::posthoc::random_ensemble_search(pool, k, trials, seed);
    write_text(out_file, spec.to_json());
    std::cout << "best ensemble val_loss=" << spec.val_loss << " members=";
    for (std::size_t i = 0; i < spec.member_ids.size(); ++i)
        std::cout << (i ? "," : "") << spec.member_ids[i];
    std::cout << '\n';
    return 0;
}

int run_attack(const fs::path& model_path, const fs::path& data_path,
               const std::string& method, const std::string& eps_text,
               std::uint32_t steps, double step_size, std::uint64_t seed,
               std::uint32_t cap, bool no_random_start, const fs::path& out_file) {
    const auto model = hre::runtime::ToyModel::load(model_path);
    const auto data = load_dataset(data_path);

    hre::runtime::AttackConfig config;
    config.method = method == "fgsm" ? hre::runtime::AttackConfig::Method::Fgsm
                                     : hre::runtime::AttackConfig::Method::Pgd;
    config.epsilon = hre::parse_fraction(eps_text);
    config.steps = steps;
    config.step_size = step_size;
    config.random_start = !no_random_start;
    config.seed = seed;

    const auto eval = hre::runtime::evaluate_adversarial(model, data, config, cap, seed);
    std::cout << "n=" << eval.n_evaluated
              << " clean_accuracy=" << eval.clean_accuracy
              << " adversarial_accuracy=" << eval.adversarial_accuracy << '\n';
    if (!out_file.empty()) {
        json doc{{"method", method},
                 {"epsilon", config.epsilon},
                 {"steps", config.steps},
                 {"seed", config.seed},
                 {"n_evaluated", eval.n_evaluated},
                 {"clean_accuracy", eval.clean_accuracy},
                 {"adversarial_accuracy", eval.adversarial_accuracy}};
        write_text(out_file, doc.dump(2));
    }
    return 0;
}

int run_train_toy(const fs::path& data_path, const std::string& mode,
                  const std::string& arch, std::uint32_t hidden,
                  const std::string& eps_text, std::uint32_t steps,
                  std::uint32_t epochs, double lr, std::uint32_t batch,
                  std::uint64_t seed, const fs::path& out_file) {
    const auto data = load_dataset(data_path);

    hre::runtime::TrainConfig config;
    config.arch = arch == "linear" ? hre::runtime::ModelKind::Linear
                                   : hre::runtime::ModelKind::Mlp;
    config.hidden_dim = hidden;
    config.mode = mode == "adversarial" ? hre::runtime::TrainConfig::Mode::Adversarial
                                        : hre::runtime::TrainConfig::Mode::Erm;
    config.attack.epsilon = hre::parse_fraction(eps_text);
    config.attack.steps = steps;
    config.attack.seed = seed;
    config.epochs = epochs;
    config.lr = lr;
    config.batch_size = batch;
    config.seed = seed;

    const auto model = hre::runtime::train(data, config);
    model.save(out_file);

    hre::runtime::Dataset all = data;
    const auto logits = model.forward_f32(all.inputs);
    std::cout << "trained " << arch << " (" << mode << ") train_accuracy="
              << hre::metrics::accuracy(logits, all.labels) << " -> "
              << out_file.string() << '\n';
    return 0;
}

json matrix_to_json(const hre::analysis::CorrelationMatrices& m, bool r_matrix) {
    json rows = json::array();
    for (std::size_t a = 0; a < 5; ++a) {
        json row = json::array();
        for (std::size_t b = 0; b < 5; ++b) {
            if (!m.defined[a][b])
                row.push_back(nullptr); // undefined (zero variance), never 0
            else
                row.push_back(r_matrix ? m.r[a][b] : m.r_squared[a][b]);
        }
        rows.push_back(row);
    }
    return rows;
}

int run_correlate(const fs::path& metrics_path, const std::string& center_by,
                  const fs::path& out_file) {
    if (!center_by.empty() && center_by != "group")
        throw hre::ValueError("--center-by supports only 'group'");
    const auto table = hre::analysis::MetricTable::load_csv(metrics_path);
    const auto matrices =
        hre::analysis::correlation_matrix(table, center_by == "group");

    json doc;
    doc["metrics"] = hre::analysis::kMetricNames;
    doc["centered_by"] = center_by.empty() ? json() : json(center_by);
    doc["pearson_r"] = matrix_to_json(matrices, true);
    doc["r_squared"] = matrix_to_json(matrices, false);
    write_text(out_file, doc.dump(2));
    std::cout << "correlation matrices written to " << out_file.string() << '\n';
    return 0;
}

int run_report(const std::vector<fs::path>& metrics_paths, const std::string& baseline,
               const fs::path& out_dir) {
    std::vector<hre::analysis::MetricTable> tables;
    for (const auto& p : metrics_paths)
        tables.push_back(hre::analysis::MetricTable::load_csv(p));
    const auto improvement = hre::analysis::hr_improvement(tables, baseline);

    fs::create_directories(out_dir);
    {
        std::ofstream out(out_dir / "hr_improvement.csv", std::ios::trunc);
        if (!out) throw hre::IoError("cannot write hr_improvement.csv");
        out << "table,group,best_s_hr,baseline_best_s_hr,delta\n";
        for (std::size_t t = 0; t < improvement.per_table.size(); ++t)
            for (const auto& d : improvement.per_table[t])
                out << metrics_paths[t].filename().string() << ',' << d.group << ','
                    << hre::format_double(d.best_hr) << ','
                    << hre::format_double(d.baseline_best_hr) << ','
                    << hre::format_double(d.delta) << '\n';
        if (improvement.per_table.size() > 1)
            for (const auto& d : improvement.average)
                out << "average," << d.group << ",,," << hre::format_double(d.delta)
                    << '\n';
    }
    {
        // per-metric binned counts per group for external plotting
        std::ofstream out(out_dir / "score_histograms.csv", std::ios::trunc);
        if (!out) throw hre::IoError("cannot write score_histograms.csv");
        out << "metric,group,bin_lo,bin_hi,count\n";
        constexpr std::uint32_t kBins = 20;
        for (std::size_t m = 0; m < 6; ++m) {
            const char* name = m < 5 ? hre::analysis::kMetricNames[m] : "s_hr";
            double lo = HUGE_VAL, hi = -HUGE_VAL;
            for (const auto& table : tables)
                for (const auto& row : table.rows) {
                    lo = std::min(lo, row.metric(m));
                    hi = std::max(hi, row.metric(m));
                }
            const double width = hi > lo ? (hi - lo) / kBins : 1.0;
            std::map<std::string, std::vector<std::uint32_t>> counts;
            for (const auto& table : tables)
                for (const auto& row : table.rows) {
                    auto& bins = counts.try_emplace(row.group,
                                                    std::vector<std::uint32_t>(kBins, 0))
                                     .first->second;
                    auto b = static_cast<std::int64_t>((row.metric(m) - lo) / width);
                    b = std::clamp<std::int64_t>(b, 0, kBins - 1);
                    ++bins[static_cast<std::size_t>(b)];
                }
            for (const auto& [group, bins] : counts)
                for (std::uint32_t b = 0; b < kBins; ++b) {
                    if (bins[b] == 0) continue;
                    out << name << ',' << group << ','
                        << hre::format_double(lo + b * width) << ','
                        << hre::format_double(lo + (b + 1) * width) << ',' << bins[b]
                        << '\n';
                }
        }
    }
    std::cout << "report written to " << out_dir.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"holistic reliability evaluation for classifier logit dumps"};
    app.require_subcommand(1);

    // score
    auto* score = app.add_subcommand("score", "evaluate a pool of runs from a plan");
    std::string score_plan, score_out;
    int score_jobs = 0;
    score->add_option("--plan", score_plan, "evaluation plan (json)")->required();
    score->add_option("--out", score_out, "output directory")->required();
    score->add_option("--jobs", score_jobs, "worker threads (0 = default)");

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "fit temperature on id_val and "
                                                      "emit pre/post score cards");
    std::string cal_run, cal_out;
    calibrate->add_option("--run", cal_run, "run manifest")->required();
    calibrate->add_option("--out", cal_out, "output file (json)")->required();

    // ensemble
    auto* ensemble =
        app.add_subcommand("ensemble", "random ensemble search over a pool listing");
    std::string ens_pool, ens_out;
    std::uint32_t ens_k = 3, ens_trials = 50;
    std::uint64_t ens_seed = 1;
    ensemble->add_option("--pool", ens_pool, "pool listing, one manifest per line")
        ->required();
    ensemble->add_option("--k", ens_k, "ensemble size (1-5)");
    ensemble->add_option("--trials", ens_trials, "random subsets to try");
    ensemble->add_option("--seed", ens_seed, "search seed");
    ensemble->add_option("--out", ens_out, "output file (json)")->required();

    // attack
    auto* attack = app.add_subcommand("attack", "attack a toy model on a feature dump");
    std::string atk_model, atk_data, atk_method = "pgd", atk_eps = "3/255", atk_out;
    std::uint32_t atk_steps = 10, atk_cap = 128;
    double atk_step_size = 0.0;
    std::uint64_t atk_seed = 1;
    bool atk_no_rs = false;
    attack->add_option("--model", atk_model, "toy model file")->required();
    attack->add_option("--data", atk_data, "feature dump with labels")->required();
    attack->add_option("--method", atk_method, "pgd|fgsm")
        ->check(CLI::IsMember({"pgd", "fgsm"}));
    attack->add_option("--eps", atk_eps, "L-inf budget, fraction (3/255) or decimal");
    attack->add_option("--steps", atk_steps, "pgd iterations");
    attack->add_option("--step-size", atk_step_size, "pgd step (0 = eps/4)");
    attack->add_option("--seed", atk_seed, "attack seed");
    attack->add_option("--cap", atk_cap, "samples to attack");
    attack->add_flag("--no-random-start", atk_no_rs, "start pgd at the clean input");
    attack->add_option("--out", atk_out, "optional report file (json)");

    // train-toy
    auto* train = app.add_subcommand("train-toy", "train a toy classifier");
    std::string tt_data, tt_mode = "erm", tt_arch = "mlp", tt_eps = "3/255", tt_out;
    std::uint32_t tt_hidden = 32, tt_steps = 10, tt_epochs = 100, tt_batch = 32;
    double tt_lr = 0.1;
    std::uint64_t tt_seed = 1;
    train->add_option("--data", tt_data, "feature dump with labels")->required();
    train->add_option("--mode", tt_mode, "erm|adversarial")
        ->check(CLI::IsMember({"erm", "adversarial"}));
    train->add_option("--arch", tt_arch, "linear|mlp")
        ->check(CLI::IsMember({"linear", "mlp"}));
    train->add_option("--hidden", tt_hidden, "mlp hidden width");
    train->add_option("--eps", tt_eps, "adversarial-mode attack budget");
    train->add_option("--steps", tt_steps, "adversarial-mode pgd iterations");
    train->add_option("--epochs", tt_epochs, "training epochs");
    train->add_option("--lr", tt_lr, "learning rate");
    train->add_option("--batch", tt_batch, "batch size");
    train->add_option("--seed", tt_seed, "training seed");
    train->add_option("--out", tt_out, "model output file")->required();

    // correlate
    auto* correlate =
        app.add_subcommand("correlate", "pairwise metric correlation matrices");
    std::string cor_metrics, cor_center, cor_out;
    correlate->add_option("--metrics", cor_metrics, "metric table (csv)")->required();
    correlate->add_option("--center-by", cor_center,
                          "subtract per-group means first (value: group)");
    correlate->add_option("--out", cor_out, "output file (json)")->required();

    // report
    auto* report = app.add_subcommand("report", "HR-improvement table and histogram data");
    std::vector<std::string> rep_metrics;
    std::string rep_baseline, rep_out;
    report->add_option("--metrics", rep_metrics, "metric table(s) (csv)")->required();
    report->add_option("--baseline", rep_baseline, "baseline group name")->required();
    report->add_option("--out", rep_out, "output directory")->required();

    // make-fixture
    auto* fixture = app.add_subcommand("make-fixture",
                                       "generate the synthetic three-run fixture");
    std::string fix_out;
    std::uint64_t fix_seed = 1;
    fixture->add_option("--out", fix_out, "output directory")->required();
    fixture->add_option("--seed", fix_seed, "generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1; // diagnostic printed by CLI11, names the flag
    }

    try {
        if (score->parsed()) return run_score(score_plan, score_out, score_jobs);
        if (calibrate->parsed()) return run_calibrate(cal_run, cal_out);
        if (ensemble->parsed())
            return run_ensemble(ens_pool, ens_k, ens_trials, ens_seed, ens_out);
        if (attack->parsed())
            return run_attack(atk_model, atk_data, atk_method, atk_eps, atk_steps,
                              atk_step_size, atk_seed, atk_cap, atk_no_rs, atk_out);
        if (train->parsed())
            return run_train_toy(tt_data, tt_mode, tt_arch, tt_hidden, tt_eps, tt_steps,
                                 tt_epochs, tt_lr, tt_batch, tt_seed, tt_out);
        if (correlate->parsed()) return run_correlate(cor_metrics, cor_center, cor_out);
        if (report->parsed()) {
            std::vector<fs::path> paths(rep_metrics.begin(), rep_metrics.end());
            return run_report(paths, rep_baseline, rep_out);
        }
        if (fixture->parsed()) {
            const auto result = hre::fixture::generate(fix_out, fix_seed);
            std::cout << "fixture written: plan=" << result.plan_path.string()
                      << " pool=" << result.pool_list.string() << '\n';
            return 0;
        }
    } catch (const hre::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
