#include "gvhd/crossval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "gvhd/metrics.hpp"
#include "json.hpp"

namespace gvhd::eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunTask {
    int seed_index;
    uint64_t seed;
    int fold;
};

struct RunOutput {
    RunRecord record;
    std::vector<train::EpochRecord> history;
};

RunOutput execute_run(const data::Cohort& cohort, const RunConfig& config,
                      const std::vector<std::vector<int>>& folds, const RunTask& task) {
    const std::vector<int> labels = cohort.labels();
    std::vector<int> train_all;
    for (size_t f = 0; f < folds.size(); ++f) {
        if (static_cast<int>(f) == task.fold) continue;
        train_all.insert(train_all.end(), folds[f].begin(), folds[f].end());
    }
    std::sort(train_all.begin(), train_all.end());
    const std::vector<int>& test_indices = folds[static_cast<size_t>(task.fold)];

    // Scaling statistics come from the training portion only.
    const data::Scaler scaler = data::fit_scaler(cohort.patients, train_all);
    std::vector<data::PatientRecord> scaled;
    scaled.reserve(cohort.patients.size());
    for (const auto& p : cohort.patients) scaled.push_back(data::apply_scaler(p, scaler));

    const uint64_t run_seed = Rng::mix(task.seed, static_cast<uint64_t>(task.fold));
    const auto inner = data::stratified_split(train_all, labels, config.valid_fraction,
                                              Rng::mix(run_seed, 0x56414c49ULL));

    model::ModelParams params =
        model::ModelParams::init(config.model_config(cohort.manifest.shapes), run_seed);
    RunOutput out;
    const train::TrainResult trained =
        train::train(params, scaled, inner.rest, inner.held_out, config.train_spec(run_seed));
    out.history = trained.history;

    // Operating point from the training-side validation split; never the test fold.
    std::vector<int> valid_labels;
    for (int idx : inner.held_out) valid_labels.push_back(labels.at(static_cast<size_t>(idx)));
    const std::vector<double> valid_scores = train::score_patients(params, scaled, inner.held_out);
    const double threshold = select_threshold(valid_labels, valid_scores);

    std::vector<int> test_labels;
    for (int idx : test_indices) test_labels.push_back(labels.at(static_cast<size_t>(idx)));
    const std::vector<double> test_scores = train::score_patients(params, scaled, test_indices);

    RunRecord& r = out.record;
    r.seed_index = task.seed_index;
    r.seed = task.seed;
    r.fold = task.fold;
    r.auc = roc_auc(test_labels, test_scores);
    r.auprc = auprc(test_labels, test_scores);
    const Confusion c = confusion_at_threshold(test_labels, test_scores, threshold);
    r.recall = c.recall;
    r.specificity = c.specificity;
    r.threshold = threshold;
    return out;
}

MetricAggregate aggregate_of(const std::vector<RunRecord>& runs, double RunRecord::* field) {
    MetricAggregate agg;
    if (runs.empty()) return agg;
    for (const auto& r : runs) agg.mean += r.*field;
    agg.mean /= static_cast<double>(runs.size());
    double var = 0.0;
    for (const auto& r : runs) {
        const double d = r.*field - agg.mean;
        var += d * d;
    }
    agg.stddev = std::sqrt(var / static_cast<double>(runs.size()));
    return agg;
}

}  // namespace

EvalReport cross_validate(const data::Cohort& cohort, const RunConfig& config, int jobs) {
    if (cohort.patients.empty()) throw ContractError("cross_validate: empty cohort");
    const std::vector<int> labels = cohort.labels();

    std::vector<RunTask> tasks;
    std::vector<std::vector<std::vector<int>>> folds_by_seed;
    for (size_t si = 0; si < config.seeds.size(); ++si) {
        folds_by_seed.push_back(data::stratified_kfold(labels, config.k_folds, config.seeds[si]));
        for (int f = 0; f < config.k_folds; ++f) {
            tasks.push_back({static_cast<int>(si), config.seeds[si], f});
        }
    }

    std::vector<RunOutput> outputs(tasks.size());
    std::vector<std::string> failures(tasks.size());
    if (jobs < 1) jobs = 1;
    jobs = std::min<int>(jobs, static_cast<int>(tasks.size()));
    if (jobs == 1) {
        for (size_t i = 0; i < tasks.size(); ++i) {
            outputs[i] = execute_run(cohort, config, folds_by_seed[static_cast<size_t>(tasks[i].seed_index)],
                                     tasks[i]);
        }
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> workers;
        for (int w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1)) {
                    try {
                        outputs[i] = execute_run(
                            cohort, config, folds_by_seed[static_cast<size_t>(tasks[i].seed_index)],
                            tasks[i]);
                    } catch (const std::exception& e) {
                        failures[i] = e.what();
                    }
                }
            });
        }
        for (auto& w : workers) w.join();
        for (size_t i = 0; i < tasks.size(); ++i) {
            // A failed run aborts the report; no silent skipping.
            if (!failures[i].empty()) throw TrainingError("cross_validate: run failed: " + failures[i]);
        }
    }

    EvalReport report;
    report.config_json = config.to_json();
    for (auto& out : outputs) {
        report.runs.push_back(out.record);
        report.histories.push_back(std::move(out.history));
    }
    report.auc = aggregate_of(report.runs, &RunRecord::auc);
    report.auprc = aggregate_of(report.runs, &RunRecord::auprc);
    report.recall = aggregate_of(report.runs, &RunRecord::recall);
    report.specificity = aggregate_of(report.runs, &RunRecord::specificity);
    return report;
}

std::string report_json(const EvalReport& report) {
    json runs = json::array();
    for (const auto& r : report.runs) {
        runs.push_back({{"seed", r.seed},
                        {"fold", r.fold},
                        {"auc", r.auc},
                        {"auprc", r.auprc},
                        {"recall", r.recall},
                        {"specificity", r.specificity},
                        {"threshold", r.threshold}});
    }
    json j{{"config", json::parse(report.config_json)},
           {"runs", runs},
           {"aggregate",
            {{"auc", {{"mean", report.auc.mean}, {"std", report.auc.stddev}}},
             {"auprc", {{"mean", report.auprc.mean}, {"std", report.auprc.stddev}}},
             {"recall", {{"mean", report.recall.mean}, {"std", report.recall.stddev}}},
             {"specificity",
              {{"mean", report.specificity.mean}, {"std", report.specificity.stddev}}}}}};
    return j.dump(2) + "\n";
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string report_csv(const EvalReport& report) {
    std::string out = "seed,fold,auc,auprc,recall,specificity,threshold\n";
    for (const auto& r : report.runs) {
        out += std::to_string(r.seed) + "," + std::to_string(r.fold) + "," + fmt(r.auc) + "," +
               fmt(r.auprc) + "," + fmt(r.recall) + "," + fmt(r.specificity) + "," + fmt(r.threshold) +
               "\n";
    }
    out += "aggregate,mean," + fmt(report.auc.mean) + "," + fmt(report.auprc.mean) + "," +
           fmt(report.recall.mean) + "," + fmt(report.specificity.mean) + ",\n";
    out += "aggregate,std," + fmt(report.auc.stddev) + "," + fmt(report.auprc.stddev) + "," +
           fmt(report.recall.stddev) + "," + fmt(report.specificity.stddev) + ",\n";
    return out;
}

std::string history_csv(const std::vector<train::EpochRecord>& history) {
    std::string out = "epoch,train_loss,valid_auc,valid_auprc\n";
    for (const auto& row : history) {
        out += std::to_string(row.epoch) + "," + fmt(row.train_loss) + "," + fmt(row.valid_auc) + "," +
               fmt(row.valid_auprc) + "\n";
    }
    return out;
}

void write_report_files(const EvalReport& report, const std::string& out_dir) {
    fs::create_directories(out_dir);
    {
        std::ofstream out(fs::path(out_dir) / "report.json");
        out << report_json(report);
    }
    {
        std::ofstream out(fs::path(out_dir) / "report.csv");
        out << report_csv(report);
    }
    for (size_t i = 0; i < report.runs.size(); ++i) {
        const auto& r = report.runs[i];
        const std::string name =
            "history_s" + std::to_string(r.seed) + "_f" + std::to_string(r.fold) + ".csv";
        std::ofstream out(fs::path(out_dir) / name);
        out << history_csv(report.histories[i]);
    }
}

}  // namespace gvhd::eval
