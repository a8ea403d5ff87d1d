#pragma once

#include <string>
#include <vector>

#include "gvhd/cohort.hpp"
#include "gvhd/config.hpp"
#include "gvhd/objective.hpp"

namespace gvhd::eval {

struct RunRecord {
    int seed_index = 0;
    uint64_t seed = 0;
    int fold = 0;
    double auc = 0.0;
    double auprc = 0.0;
    double recall = 0.0;
    double specificity = 0.0;
    double threshold = 0.0;
};

struct MetricAggregate {
    double mean = 0.0;
    double stddev = 0.0;  // population formula over runs
};

struct EvalReport {
    std::vector<RunRecord> runs;  // ordered by (seed index, fold)
    MetricAggregate auc, auprc, recall, specificity;
    std::string config_json;  // resolved config snapshot
    std::vector<std::vector<train::EpochRecord>> histories;  // parallel to runs
};

// Stratified k-fold x multi-seed protocol: per run, fit the scaler on the
// training portion only, train with an inner validation split, pick the
// operating threshold on that split, and evaluate on the held-out fold.
// Runs are independent; `jobs` > 1 fans them out to a worker pool while the
// report keeps deterministic (seed, fold) order.
EvalReport cross_validate(const data::Cohort& cohort, const RunConfig& config, int jobs = 1);

std::string report_json(const EvalReport& report);
std::string report_csv(const EvalReport& report);
std::string history_csv(const std::vector<train::EpochRecord>& history);

// Writes report.json, report.csv, and history_s<seed>_f<fold>.csv per run.
void write_report_files(const EvalReport& report, const std::string& out_dir);

}  // namespace gvhd::eval
