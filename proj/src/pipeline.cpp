#include "hre/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <nlohmann/json.hpp>

#include "hre/error.hpp"
#include "hre/posthoc.hpp"
#include "hre/util.hpp"

namespace hre::pipeline {

void EvaluationPlan::validate() const {
    if (runs.empty()) throw ValueError("plan lists no runs");
    score.validate();
    detector_config.validate();
    attack.validate();
    if (id_cap < 1 || adv_cap < 1) throw ValueError("sample caps must be >= 1");
    if (id_split != "id_val" && id_split != "id_test")
        throw ValueError("id_split must be id_val or id_test");
}

namespace {

AdvMode parse_adv_mode(const std::string& s) {
    if (s == "external_dump") return AdvMode::ExternalDump;
    if (s == "toy_attack") return AdvMode::ToyAttack;
    if (s == "skip") return AdvMode::Skip;
    throw FormatError("unknown adversarial mode: " + s);
}

std::string adv_mode_name(AdvMode m) {
    switch (m) {
        case AdvMode::ExternalDump: return "external_dump";
        case AdvMode::ToyAttack: return "toy_attack";
        case AdvMode::Skip: return "skip";
    }
    throw ValueError("bad adv mode");
}

} // namespace

EvaluationPlan EvaluationPlan::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open plan: " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("plan parse error: " + std::string(e.what()));
    }

    EvaluationPlan plan;
    const auto base = path.parent_path();
    try {
        for (const auto& r : doc.at("runs"))
            plan.runs.push_back(base / r.get<std::string>());

        if (doc.contains("score")) {
            const auto& s = doc.at("score");
            if (s.contains("weights"))
                plan.score.weights = s.at("weights").get<std::array<double, 5>>();
            if (s.contains("ece_bins"))
                plan.score.ece_bins = s.at("ece_bins").get<std::uint32_t>();
            if (s.contains("ece_max")) plan.score.ece_max = s.at("ece_max").get<double>();
            if (s.contains("id_rescale") && !s.at("id_rescale").is_null()) {
                const auto& r = s.at("id_rescale");
                plan.score.id_rescale =
                    std::make_pair(r.at(0).get<double>(), r.at(1).get<double>());
            }
        }
        if (doc.contains("detectors")) {
            const auto& d = doc.at("detectors");
            if (d.contains("enabled")) {
                plan.detector_config.enabled.clear();
                for (const auto& name : d.at("enabled"))
                    plan.detector_config.enabled.push_back(
                        detectors::parse_detector(name.get<std::string>()));
            }
            if (d.contains("odin_temperature"))
                plan.detector_config.odin_temperature =
                    d.at("odin_temperature").get<double>();
            if (d.contains("odin_epsilon"))
                plan.detector_config.odin_epsilon = d.at("odin_epsilon").get<double>();
            if (d.contains("energy_temperature"))
                plan.detector_config.energy_temperature =
                    d.at("energy_temperature").get<double>();
            if (d.contains("per_source_cap"))
                plan.detector_config.per_source_cap =
                    d.at("per_source_cap").get<std::uint32_t>();
            if (d.contains("id_split"))
                plan.detector_config.id_split = d.at("id_split").get<std::string>();
        }
        if (doc.contains("adversarial")) {
            const auto& a = doc.at("adversarial");
            plan.adv_mode = parse_adv_mode(a.at("mode").get<std::string>());
            if (a.contains("method"))
                plan.attack.method = a.at("method").get<std::string>() == "fgsm"
                                         ? runtime::AttackConfig::Method::Fgsm
                                         : runtime::AttackConfig::Method::Pgd;
            if (a.contains("epsilon")) {
                const auto& eps = a.at("epsilon");
                plan.attack.epsilon = eps.is_string()
                                          ? parse_fraction(eps.get<std::string>())
                                          : eps.get<double>();
            }
            if (a.contains("steps")) plan.attack.steps = a.at("steps").get<std::uint32_t>();
            if (a.contains("step_size"))
                plan.attack.step_size = a.at("step_size").get<double>();
            if (a.contains("random_start"))
                plan.attack.random_start = a.at("random_start").get<bool>();
        }
        if (doc.contains("temperature")) {
            const auto t = doc.at("temperature").get<std::string>();
            if (t == "none")
                plan.temperature = TemperatureMode::None;
            else if (t == "fit_and_report_both")
                plan.temperature = TemperatureMode::FitAndReportBoth;
            else
                throw FormatError("unknown temperature mode: " + t);
        }
        if (doc.contains("seeds")) {
            const auto& s = doc.at("seeds");
            if (s.contains("subsample"))
                plan.subsample_seed = s.at("subsample").get<std::uint64_t>();
            if (s.contains("attack")) plan.attack.seed = s.at("attack").get<std::uint64_t>();
        }
        if (doc.contains("id_cap")) plan.id_cap = doc.at("id_cap").get<std::uint32_t>();
        if (doc.contains("adv_cap")) plan.adv_cap = doc.at("adv_cap").get<std::uint32_t>();
        if (doc.contains("id_split"))
            plan.id_split = doc.at("id_split").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("plan field error: " + std::string(e.what()));
    }
    plan.validate();
    return plan;
}

void EvaluationPlan::save(const std::filesystem::path& path) const {
    nlohmann::json doc;
    doc["runs"] = nlohmann::json::array();
    for (const auto& r : runs) doc["runs"].push_back(r.string());
    doc["score"] = {{"weights", score.weights},
                    {"ece_bins", score.ece_bins},
                    {"ece_max", score.ece_max}};
    if (score.id_rescale)
        doc["score"]["id_rescale"] = {score.id_rescale->first, score.id_rescale->second};
    nlohmann::json enabled = nlohmann::json::array();
    for (auto d : detector_config.enabled) enabled.push_back(detectors::detector_name(d));
    doc["detectors"] = {{"enabled", enabled},
                        {"odin_temperature", detector_config.odin_temperature},
                        {"odin_epsilon", detector_config.odin_epsilon},
                        {"energy_temperature", detector_config.energy_temperature},
                        {"per_source_cap", detector_config.per_source_cap},
                        {"id_split", detector_config.id_split}};
    doc["adversarial"] = {
        {"mode", adv_mode_name(adv_mode)},
        {"method", attack.method == runtime::AttackConfig::Method::Fgsm ? "fgsm" : "pgd"},
        {"epsilon", attack.epsilon},
        {"steps", attack.steps},
        {"step_size", attack.step_size},
        {"random_start", attack.random_start}};
    doc["temperature"] =
        temperature == TemperatureMode::None ? "none" : "fit_and_report_both";
    doc["seeds"] = {{"subsample", subsample_seed}, {"attack", attack.seed}};
    doc["id_cap"] = id_cap;
    doc["adv_cap"] = adv_cap;
    doc["id_split"] = id_split;

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << doc.dump(2) << '\n';
}

namespace {

struct AdvResult {
    std::optional<double> p_adv;
    std::string mode;
};

AdvResult compute_adv(const store::ModelRun& run, const EvaluationPlan& plan,
                      const store::Split& id_split,
                      const runtime::ToyModel* model) {
    AdvResult out;
    out.mode = adv_mode_name(plan.adv_mode);
    switch (plan.adv_mode) {
        case AdvMode::Skip:
            return out;
        case AdvMode::ExternalDump: {
            if (!run.adv)
                throw MissingSplit("adversarial mode external_dump needs an adv_id split");
            const auto sub =
                store::subsample(run.adv->dump, plan.adv_cap, plan.subsample_seed);
            out.p_adv = metrics::accuracy(sub.logits, sub.labels);
            return out;
        }
        case AdvMode::ToyAttack: {
            if (model == nullptr)
                throw NoGradientOracle("adversarial mode toy_attack needs a model");
            if (!id_split.features)
                throw NoGradientOracle(
                    "adversarial mode toy_attack needs raw features for " + id_split.role);
            runtime::Dataset data;
            data.inputs = to_dmatrix(*id_split.features);
            data.labels = id_split.dump.labels;
            const auto eval = runtime::evaluate_adversarial(*model, data, plan.attack,
                                                            plan.adv_cap,
                                                            plan.subsample_seed);
            out.p_adv = eval.adversarial_accuracy;
            return out;
        }
    }
    throw ValueError("bad adv mode");
}

metrics::ScoreCard assemble_card(const store::ModelRun& run, const EvaluationPlan& plan,
                                 double p_id, std::uint32_t id_n, double ece_id,
                                 const std::vector<std::string>& shift_tags,
                                 const std::vector<double>& shift_perf,
                                 const std::vector<double>& shift_ece,
                                 const std::vector<metrics::DetectorAuroc>& aurocs,
                                 const AdvResult& adv) {
    metrics::ScoreCard card;
    card.model_id = run.model_id;
    card.group = run.group;
    card.weights = plan.score.weights;
    card.p_id = p_id;
    card.id_n = id_n;
    card.ece_id = ece_id;
    card.shift_tags = shift_tags;
    card.per_shift_performance = shift_perf;
    card.per_shift_ece = shift_ece;
    card.per_detector_auroc = aurocs;
    card.adv_mode = adv.mode;
    card.ece_bins = plan.score.ece_bins;
    card.ece_max = plan.score.ece_max;
    card.id_rescale = plan.score.id_rescale;

    card.s_id = metrics::score_id(p_id, plan.score.id_rescale);
    card.s_ds = metrics::score_ds(p_id, shift_perf);
    card.s_cal = metrics::score_cal(ece_id, shift_ece, plan.score.ece_max);
    std::vector<double> auroc_values;
    auroc_values.reserve(aurocs.size());
    for (const auto& a : aurocs) auroc_values.push_back(a.auroc);
    card.s_ood = metrics::score_ood(auroc_values);

    if (adv.p_adv) {
        card.p_adv = adv.p_adv;
        card.s_adv = metrics::score_adv(*adv.p_adv, p_id);
        card.effective_weights = card.weights;
        const std::array<double, 5> scores{card.s_id, card.s_ds, *card.s_adv,
                                           card.s_cal, card.s_ood};
        card.s_hr = metrics::score_hr(scores, card.weights);
    } else {
        // renormalize over the four measured properties instead of imputing 0
        const double rest = card.weights[0] + card.weights[1] + card.weights[3] +
                            card.weights[4];
        if (rest <= 0.0)
            throw WeightError("all weight on s_adv but adversarial data unavailable");
        card.effective_weights = {card.weights[0] / rest, card.weights[1] / rest, 0.0,
                                  card.weights[3] / rest, card.weights[4] / rest};
        card.s_hr = card.effective_weights[0] * card.s_id +
                    card.effective_weights[1] * card.s_ds +
                    card.effective_weights[3] * card.s_cal +
                    card.effective_weights[4] * card.s_ood;
    }
    return card;
}

} // namespace

RunCards evaluate_run(const store::ModelRun& run, const EvaluationPlan& plan) {
    plan.validate();

    const store::Split& id_split = plan.id_split == "id_val" ? run.id_val : run.id_test;
    const auto id_sub = store::subsample(id_split.dump, plan.id_cap, plan.subsample_seed);
    const double p_id = metrics::accuracy(id_sub.logits, id_sub.labels);
    const double ece_id = metrics::ece(id_sub.logits, id_sub.labels, plan.score.ece_bins);

    std::vector<std::string> shift_tags;
    std::vector<double> shift_perf;
    std::vector<double> shift_ece;
    for (const auto& shift : run.shifts) {
        shift_tags.push_back(shift.role);
        shift_perf.push_back(metrics::accuracy(shift.dump.logits, shift.dump.labels));
        shift_ece.push_back(
            metrics::ece(shift.dump.logits, shift.dump.labels, plan.score.ece_bins));
    }

    std::optional<runtime::ToyModel> model;
    if (run.model_path) model = runtime::ToyModel::load(*run.model_path);

    // ODIN needs model access; in logits-only mode it is dropped and the OOD
    // average shrinks, which the card records via the detector list
    detectors::DetectorConfig det = plan.detector_config;
    const bool odin_requested =
        std::find(det.enabled.begin(), det.enabled.end(), detectors::Detector::Odin) !=
        det.enabled.end();
    const store::Split& det_id =
        det.id_split == "id_test" ? run.id_test : run.id_val;
    bool odin_usable = model.has_value() && det_id.features.has_value();
    if (odin_usable)
        for (const auto& ood : run.oods)
            if (!ood.features) odin_usable = false;
    if (odin_requested && !odin_usable) {
        if (det.enabled.size() == 1)
            throw NoGradientOracle("odin is the only enabled detector but the run "
                                   "is logits-only");
        det.enabled.erase(
            std::remove(det.enabled.begin(), det.enabled.end(), detectors::Detector::Odin),
            det.enabled.end());
    }

    const auto aurocs = detectors::detect(run, det, model ? &*model : nullptr, 1.0,
                                          plan.subsample_seed);
    const auto adv = compute_adv(run, plan, id_split, model ? &*model : nullptr);

    RunCards cards;
    cards.pre = assemble_card(run, plan, p_id, id_sub.n(), ece_id, shift_tags, shift_perf,
                              shift_ece, aurocs, adv);

    if (plan.temperature == TemperatureMode::None) return cards;

    // temperature fit on the in-distribution validation split
    const auto scaler =
        posthoc::fit_temperature(run.id_val.dump.logits, run.id_val.dump.labels);
    const double t = scaler.temperature;

    const auto id_scaled = posthoc::apply_temperature(id_sub.logits, t);
    const double ece_id_post = metrics::ece(id_scaled, id_sub.labels, plan.score.ece_bins);
    std::vector<double> shift_ece_post;
    for (const auto& shift : run.shifts) {
        const auto scaled = posthoc::apply_temperature(shift.dump.logits, t);
        shift_ece_post.push_back(
            metrics::ece(scaled, shift.dump.labels, plan.score.ece_bins));
    }

    std::optional<runtime::ToyModel> scaled_model;
    if (model) scaled_model = model->with_output_scale(1.0 / t);
    const auto aurocs_post = detectors::detect(
        run, det, scaled_model ? &*scaled_model : nullptr, t, plan.subsample_seed);

    AdvResult adv_post;
    adv_post.mode = adv.mode;
    if (plan.adv_mode == AdvMode::ExternalDump) {
        // scaling divides every logit by a positive constant; argmax-based
        // accuracy is bitwise identical, so reuse the pre-scaling value
        adv_post.p_adv = adv.p_adv;
    } else if (plan.adv_mode == AdvMode::ToyAttack) {
        runtime::Dataset data;
        data.inputs = to_dmatrix(*id_split.features);
        data.labels = id_split.dump.labels;
        const auto eval = runtime::evaluate_adversarial(
            *scaled_model, data, plan.attack, plan.adv_cap, plan.subsample_seed);
        adv_post.p_adv = eval.adversarial_accuracy;
    }

    cards.post = assemble_card(run, plan, p_id, id_sub.n(), ece_id_post, shift_tags,
                               shift_perf, shift_ece_post, aurocs_post, adv_post);
    metrics::TemperatureInfo info;
    info.temperature = scaler.temperature;
    info.val_nll_before = scaler.val_nll_before;
    info.val_nll_after = scaler.val_nll_after;
    cards.post->temperature = info;
    return cards;
}

PoolResult evaluate_pool(const EvaluationPlan& plan, int jobs) {
    plan.validate();
#ifdef _OPENMP
    if (jobs > 0) omp_set_num_threads(jobs);
#else
    (void)jobs;
#endif

    const auto n = plan.runs.size();
    std::vector<std::optional<RunCards>> slots(n);
    std::vector<std::optional<RunFailure>> fails(n);

#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
        const auto& manifest = plan.runs[static_cast<std::size_t>(i)];
        try {
            const auto run = store::load_run(manifest);
            slots[i] = evaluate_run(run, plan);
        } catch (const std::exception& e) {
            fails[i] = RunFailure{manifest.string(), e.what()};
        }
    }

    PoolResult result;
    for (std::size_t i = 0; i < n; ++i) {
        if (slots[i]) result.cards.push_back(std::move(*slots[i]));
        if (fails[i]) result.failures.push_back(std::move(*fails[i]));
    }
    std::sort(result.cards.begin(), result.cards.end(),
              [](const RunCards& a, const RunCards& b) {
                  return a.pre.model_id < b.pre.model_id;
              });
    std::sort(result.failures.begin(), result.failures.end(),
              [](const RunFailure& a, const RunFailure& b) {
                  return a.manifest < b.manifest;
              });

    for (const auto& cards : result.cards) {
        const auto& card = cards.final_card();
        analysis::MetricRow row;
        row.model_id = card.model_id;
        row.group = card.group;
        row.s_id = card.s_id;
        row.s_ds = card.s_ds;
        row.s_adv = card.s_adv.value_or(std::nan(""));
        row.s_cal = card.s_cal;
        row.s_ood = card.s_ood;
        row.s_hr = card.s_hr;
        result.table.rows.push_back(std::move(row));
    }
    return result;
}

} // namespace hre::pipeline
