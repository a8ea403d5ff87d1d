#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "gvhd/cohort.hpp"
#include "gvhd/config.hpp"
#include "gvhd/crossval.hpp"
#include "gvhd/gradcheck_suite.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    bool force = false;
    int jobs = 1;
    int64_t seed_override = -1;
};

gvhd::RunConfig load_config(const CommonArgs& args) {
    gvhd::RunConfig config =
        args.config_path.empty() ? gvhd::RunConfig{} : gvhd::RunConfig::from_file(args.config_path);
    if (const char* env = std::getenv("GVHD_OUT_DIR"); env != nullptr && *env != '\0') {
        // Environment default applies when the config did not override it.
        if (config.out_dir == gvhd::RunConfig{}.out_dir) config.out_dir = env;
    }
    return config;
}

bool dir_non_empty(const fs::path& dir) {
    return fs::exists(dir) && fs::is_directory(dir) && !fs::is_empty(dir);
}

int cmd_generate(const CommonArgs& args) {
    gvhd::RunConfig config = load_config(args);
    if (args.seed_override >= 0) config.generator.seed = static_cast<uint64_t>(args.seed_override);
    const fs::path target = config.cohort_dir;
    if (dir_non_empty(target) && !args.force) {
        std::cerr << "gvhd generate: refusing to write into non-empty directory '" << target.string()
                  << "' (use --force)\n";
        return 2;
    }
    const gvhd::data::Cohort cohort = gvhd::data::generate_cohort(config.generator);
    gvhd::data::save_cohort(cohort, target.string());
    std::printf("wrote %d patients (%d positives) to %s\n", cohort.manifest.patients,
                cohort.manifest.positives, target.string().c_str());
    std::printf("realized prevalence:     %.6f\n", cohort.manifest.realized_prevalence);
    std::printf("realized lab missingness: %.6f\n", cohort.manifest.realized_lab_missing);
    return 0;
}

void print_aggregates(const gvhd::eval::EvalReport& report) {
    std::printf("%-12s %10s %10s\n", "metric", "mean", "std");
    std::printf("%-12s %10.4f %10.4f\n", "auc", report.auc.mean, report.auc.stddev);
    std::printf("%-12s %10.4f %10.4f\n", "auprc", report.auprc.mean, report.auprc.stddev);
    std::printf("%-12s %10.4f %10.4f\n", "recall", report.recall.mean, report.recall.stddev);
    std::printf("%-12s %10.4f %10.4f\n", "specificity", report.specificity.mean,
                report.specificity.stddev);
}

int cmd_crossval(const CommonArgs& args) {
    gvhd::RunConfig config = load_config(args);
    if (args.seed_override >= 0) config.seeds = {static_cast<uint64_t>(args.seed_override)};
    const fs::path report_path = fs::path(config.out_dir) / "report.json";
    if (fs::exists(report_path) && !args.force) {
        std::cerr << "gvhd crossval: '" << report_path.string()
                  << "' already exists (use --force to overwrite)\n";
        return 2;
    }
    const gvhd::data::Cohort cohort = gvhd::data::load_cohort(config.cohort_dir);
    const gvhd::eval::EvalReport report = gvhd::eval::cross_validate(cohort, config, args.jobs);
    gvhd::eval::write_report_files(report, config.out_dir);
    std::printf("%zu runs (%d folds x %zu seeds) -> %s\n", report.runs.size(), config.k_folds,
                config.seeds.size(), config.out_dir.c_str());
    print_aggregates(report);
    return 0;
}

int cmd_gradcheck(int trials) {
    const auto results = gvhd::run_gradcheck_suite(gvhd::kGradcheckSuiteSeed, trials, 1e-3, 1e-4);
    bool all_pass = true;
    std::printf("%-22s %14s  %s\n", "op", "max_rel_err", "status");
    for (const auto& entry : results) {
        std::printf("%-22s %14.3e  %s\n", entry.op.c_str(), entry.max_rel_err,
                    entry.pass ? "pass" : "FAIL");
        all_pass = all_pass && entry.pass;
    }
    if (!all_pass) {
        std::cerr << "gradcheck: at least one op exceeded the 1e-4 tolerance\n";
        return 1;
    }
    return 0;
}

int cmd_report(const CommonArgs& args) {
    const gvhd::RunConfig config = load_config(args);
    const fs::path report_path = fs::path(config.out_dir) / "report.json";
    std::ifstream in(report_path);
    if (!in) {
        std::cerr << "gvhd report: cannot open '" << report_path.string() << "'\n";
        return 2;
    }
    json j;
    in >> j;
    std::printf("%-8s %-6s %8s %8s %8s %12s %10s\n", "seed", "fold", "auc", "auprc", "recall",
                "specificity", "threshold");
    for (const auto& run : j.at("runs")) {
        std::printf("%-8llu %-6d %8.4f %8.4f %8.4f %12.4f %10.4f\n",
                    static_cast<unsigned long long>(run.at("seed").get<uint64_t>()),
                    run.at("fold").get<int>(), run.at("auc").get<double>(),
                    run.at("auprc").get<double>(), run.at("recall").get<double>(),
                    run.at("specificity").get<double>(), run.at("threshold").get<double>());
    }
    const auto& agg = j.at("aggregate");
    std::printf("\n%-12s %10s %10s\n", "metric", "mean", "std");
    for (const char* metric : {"auc", "auprc", "recall", "specificity"}) {
        std::printf("%-12s %10.4f %10.4f\n", metric, agg.at(metric).at("mean").get<double>(),
                    agg.at(metric).at("std").get<double>());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GVHD risk model: synthetic cohorts, training, evaluation"};
    app.require_subcommand(1);

    CommonArgs args;
    int trials = 100;

    auto add_common = [&](CLI::App* sub, bool with_jobs) {
        sub->add_option("--config", args.config_path, "JSON run configuration");
        sub->add_option("--seed", args.seed_override, "override the config seed");
        sub->add_flag("--force", args.force, "overwrite existing outputs");
        if (with_jobs) sub->add_option("--jobs", args.jobs, "worker pool size for runs");
    };

    CLI::App* generate = app.add_subcommand("generate", "write a synthetic cohort");
    add_common(generate, false);
    CLI::App* crossval = app.add_subcommand("crossval", "stratified k-fold x seeds evaluation");
    add_common(crossval, true);
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--trials", trials, "randomized trials per op");
    CLI::App* report = app.add_subcommand("report", "print a previously written report");
    add_common(report, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return cmd_generate(args);
        if (crossval->parsed()) return cmd_crossval(args);
        if (gradcheck->parsed()) return cmd_gradcheck(trials);
        if (report->parsed()) return cmd_report(args);
    } catch (const std::exception& e) {
        std::cerr << "gvhd: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
