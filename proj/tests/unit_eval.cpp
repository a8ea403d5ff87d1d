#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "gvhd/cohort.hpp"
#include "gvhd/config.hpp"
#include "gvhd/crossval.hpp"
#include "gvhd/metrics.hpp"
#include "gvhd/rng.hpp"

using namespace gvhd;

namespace {

// O(P N) pair counting, the AUC oracle.
double auc_oracle(const std::vector<int>& labels, const std::vector<double>& scores) {
    double wins = 0.0;
    long pairs = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) {
                wins += 1.0;
            } else if (scores[i] == scores[j]) {
                wins += 0.5;
            }
        }
    }
    return wins / static_cast<double>(pairs);
}

// Independent prefix-walk average precision.
double ap_oracle(const std::vector<int>& labels, const std::vector<double>& scores) {
    std::vector<size_t> order(labels.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    long n_pos = 0;
    for (int y : labels) n_pos += y;
    double ap = 0.0;
    long tp = 0;
    for (size_t k = 0; k < order.size(); ++k) {
        if (labels[order[k]] == 1) {
            ++tp;
            ap += (static_cast<double>(tp) / static_cast<double>(k + 1)) / static_cast<double>(n_pos);
        }
    }
    return ap;
}

data::GeneratorConfig tiny_generator(uint64_t seed) {
    data::GeneratorConfig gen;
    gen.n_patients = 48;
    gen.prevalence = 0.25;
    gen.missing_ratio = 0.4;
    gen.effect_size = 2.0;
    gen.seed = seed;
    gen.shapes = {3, 3, 4, 3, 3, 4, 5};
    return gen;
}

RunConfig tiny_run_config() {
    RunConfig config;
    config.hidden = 6;
    config.ffn_hidden = 6;
    config.freq_components = 2;
    config.extension_width = 2;
    config.branch_hidden = 3;
    config.heads = 2;
    config.batch_size = 8;
    config.epochs = 2;
    config.k_folds = 3;
    config.seeds = {1, 2};
    config.valid_fraction = 0.25;
    return config;
}

}  // namespace

TEST_CASE("roc auc fixed cases") {
    CHECK(eval::roc_auc({1, 1, 0, 0}, {0.9, 0.8, 0.2, 0.1}) == 1.0);
    CHECK(eval::roc_auc({1, 1, 0, 0, 0}, {0.9, 0.4, 0.5, 0.3, 0.2}) ==
          doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(eval::roc_auc({1, 0, 1, 0}, {0.5, 0.5, 0.5, 0.5}) == 0.5);
    CHECK_THROWS_AS(eval::roc_auc({1, 1}, {0.3, 0.4}), UndefinedMetricError);
}

TEST_CASE("roc auc equals pair counting exactly on 200 random cases") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 4 + static_cast<int>(rng.below(47));
        std::vector<int> labels(static_cast<size_t>(n));
        std::vector<double> scores(static_cast<size_t>(n));
        int pos = 0;
        for (int i = 0; i < n; ++i) {
            labels[static_cast<size_t>(i)] = rng.bernoulli(0.3) ? 1 : 0;
            pos += labels[static_cast<size_t>(i)];
            // Coarse grid makes ties common.
            scores[static_cast<size_t>(i)] = rng.below(8) / 8.0;
        }
        if (pos == 0) labels[0] = 1;
        if (pos == n) labels[0] = 0;
        CHECK(eval::roc_auc(labels, scores) == auc_oracle(labels, scores));
    }
}

TEST_CASE("roc auc is invariant under strictly increasing transforms") {
    Rng rng(13);
    std::vector<int> labels(60);
    std::vector<double> scores(60);
    for (size_t i = 0; i < labels.size(); ++i) {
        labels[i] = rng.bernoulli(0.2) ? 1 : 0;
        scores[i] = rng.below(16) / 16.0;
    }
    labels[0] = 1;
    labels[1] = 0;
    const double base = eval::roc_auc(labels, scores);

    auto cube = scores;
    for (double& s : cube) s = s * s * s;
    auto affine = scores;
    for (double& s : affine) s = 3.7 * s + 11.0;
    auto logistic = scores;
    for (double& s : logistic) s = 1.0 / (1.0 + std::exp(-5.0 * s));
    CHECK(eval::roc_auc(labels, cube) == base);
    CHECK(eval::roc_auc(labels, affine) == base);
    CHECK(eval::roc_auc(labels, logistic) == base);
}

TEST_CASE("average precision fixed cases and oracle sweep") {
    CHECK(eval::auprc({1, 1, 0, 0}, {0.9, 0.8, 0.2, 0.1}) == 1.0);
    CHECK(eval::auprc({1, 0, 1}, {0.9, 0.8, 0.7}) == doctest::Approx(0.5 + 1.0 / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(eval::auprc({0, 0}, {0.3, 0.4}), UndefinedMetricError);

    // Exhaustive n <= 10 label patterns against the prefix oracle.
    for (int n = 1; n <= 10; ++n) {
        for (int pattern = 1; pattern < (1 << n); ++pattern) {
            std::vector<int> labels(static_cast<size_t>(n));
            std::vector<double> scores(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                labels[static_cast<size_t>(i)] = (pattern >> i) & 1;
                scores[static_cast<size_t>(i)] = 1.0 - 0.1 * i;  // strictly descending
            }
            CHECK(eval::auprc(labels, scores) == doctest::Approx(ap_oracle(labels, scores)).epsilon(1e-14));
        }
    }

    // Ties handled by the documented stable order.
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(8));
        std::vector<int> labels(static_cast<size_t>(n));
        std::vector<double> scores(static_cast<size_t>(n));
        int pos = 0;
        for (int i = 0; i < n; ++i) {
            labels[static_cast<size_t>(i)] = rng.bernoulli(0.4) ? 1 : 0;
            pos += labels[static_cast<size_t>(i)];
            scores[static_cast<size_t>(i)] = rng.below(4) / 4.0;
        }
        if (pos == 0) labels[0] = 1;
        CHECK(eval::auprc(labels, scores) == doctest::Approx(ap_oracle(labels, scores)).epsilon(1e-14));
    }
}

TEST_CASE("average precision of random scores sits near the prevalence") {
    Rng rng(19);
    const int n = 2000;
    const double prevalence = 0.1;
    std::vector<int> labels(static_cast<size_t>(n));
    std::vector<double> scores(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        labels[static_cast<size_t>(i)] = rng.bernoulli(prevalence) ? 1 : 0;
        scores[static_cast<size_t>(i)] = rng.uniform(0, 1);
    }
    const double ap = eval::auprc(labels, scores);
    CHECK(ap > prevalence * 0.5);
    CHECK(ap < prevalence * 1.5);
}

TEST_CASE("confusion at threshold") {
    const std::vector<int> labels{1, 0, 0, 1};
    const std::vector<double> scores{0.7, 0.6, 0.2, 0.4};
    const auto c = eval::confusion_at_threshold(labels, scores, 0.5);
    CHECK(c.tp == 1);
    CHECK(c.fp == 1);
    CHECK(c.tn == 1);
    CHECK(c.fn == 1);
    CHECK(c.recall == doctest::Approx(0.5));
    CHECK(c.specificity == doctest::Approx(0.5));
    CHECK(c.tp + c.fn == 2);
    CHECK(c.tn + c.fp == 2);

    CHECK(eval::confusion_at_threshold(labels, scores, 0.0).recall == 1.0);
    const auto top = eval::confusion_at_threshold(labels, scores, 0.71);
    CHECK(top.recall == 0.0);
    CHECK(top.specificity == 1.0);

    const auto single = eval::confusion_at_threshold({1, 1}, {0.2, 0.9}, 0.5);
    CHECK(single.has_positives);
    CHECK(!single.has_negatives);
    CHECK(std::isnan(single.specificity));
    CHECK(single.recall == doctest::Approx(0.5));
}

TEST_CASE("threshold selection maximizes Youden's J") {
    CHECK(eval::select_threshold({1, 0}, {0.9, 0.1}) == doctest::Approx(0.5));
    {
        const auto c = eval::confusion_at_threshold({1, 0}, {0.9, 0.1}, 0.5);
        CHECK(c.recall + c.specificity - 1.0 == doctest::Approx(1.0));
    }
    // All scores tied: the single candidate is the score itself, J = 0.
    CHECK(eval::select_threshold({1, 0, 1}, {0.4, 0.4, 0.4}) == doctest::Approx(0.4));

    // Argmax property against an exhaustive candidate scan.
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 5 + static_cast<int>(rng.below(20));
        std::vector<int> labels(static_cast<size_t>(n));
        std::vector<double> scores(static_cast<size_t>(n));
        int pos = 0;
        for (int i = 0; i < n; ++i) {
            labels[static_cast<size_t>(i)] = rng.bernoulli(0.4) ? 1 : 0;
            pos += labels[static_cast<size_t>(i)];
            scores[static_cast<size_t>(i)] = rng.below(10) / 10.0;
        }
        if (pos == 0) labels[0] = 1;
        if (pos == n) labels[0] = 0;
        const double theta = eval::select_threshold(labels, scores);
        const auto at_theta = eval::confusion_at_threshold(labels, scores, theta);
        const double best_j = at_theta.recall + at_theta.specificity - 1.0;
        std::vector<double> sorted(scores);
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        for (size_t i = 0; i + 1 < sorted.size(); ++i) {
            const double candidate = (sorted[i] + sorted[i + 1]) / 2.0;
            const auto c = eval::confusion_at_threshold(labels, scores, candidate);
            CHECK(best_j >= c.recall + c.specificity - 1.0 - 1e-12);
        }
    }
}

TEST_CASE("config defaults mirror the published settings") {
    const RunConfig config;
    CHECK(config.hidden == 32);
    CHECK(config.ffn_hidden == 128);
    CHECK(config.freq_components == 12);
    CHECK(config.batch_size == 64);
    CHECK(config.positive_ratio == 0.5);
    CHECK(config.learning_rate == 0.001);
    CHECK(config.k_folds == 5);
    CHECK(config.seeds.size() == 3);
    CHECK(config.epochs == 100);
    CHECK(objective_name(config.objective) == "auc_margin");
    CHECK(config.generator.n_patients == 2100);
    CHECK(config.generator.prevalence == 0.02);
    CHECK(config.generator.missing_ratio == 0.729);
}

TEST_CASE("config parsing is strict about unknown keys") {
    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"train": {"batsch_size": 64}})"),
                         doctest::Contains("batsch_size"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"objective": "hinge"})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"unrelated": 1})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text("not json"), ConfigError);

    const auto config = RunConfig::from_json_text(R"({"train": {"epochs": 7}})");
    CHECK(config.epochs == 7);
    CHECK(config.batch_size == 64);  // untouched default
}

TEST_CASE("config snapshot round-trips") {
    RunConfig config;
    config.epochs = 9;
    config.use_fusion = false;
    config.seeds = {5, 6};
    config.objective = train::Objective::Bce;
    const std::string snapshot = config.to_json();
    const auto parsed = RunConfig::from_json_text(snapshot);
    CHECK(parsed.to_json() == snapshot);
    CHECK(parsed.epochs == 9);
    CHECK(parsed.use_fusion == false);
    CHECK(parsed.objective == train::Objective::Bce);
}

TEST_CASE("cross validation produces k x seeds ordered runs and reproducible reports") {
    const auto cohort = data::generate_cohort(tiny_generator(31));
    auto config = tiny_run_config();
    const auto report = eval::cross_validate(cohort, config, 1);
    REQUIRE(report.runs.size() == 6);  // 3 folds x 2 seeds
    REQUIRE(report.histories.size() == 6);
    for (size_t i = 0; i < report.runs.size(); ++i) {
        CHECK(report.runs[i].seed == config.seeds[i / 3]);
        CHECK(report.runs[i].fold == static_cast<int>(i % 3));
        CHECK(report.runs[i].auc >= 0.0);
        CHECK(report.runs[i].auc <= 1.0);
        CHECK(report.runs[i].auprc <= 1.0);
        CHECK(report.histories[i].size() == static_cast<size_t>(config.epochs));
    }

    const std::string json_a = eval::report_json(report);
    const auto report_b = eval::cross_validate(cohort, config, 1);
    CHECK(eval::report_json(report_b) == json_a);

    // A worker pool must not change the report.
    const auto report_c = eval::cross_validate(cohort, config, 3);
    CHECK(eval::report_json(report_c) == json_a);

    // Aggregates use the population standard deviation over runs.
    double mean = 0.0;
    for (const auto& r : report.runs) mean += r.auc;
    mean /= static_cast<double>(report.runs.size());
    double var = 0.0;
    for (const auto& r : report.runs) var += (r.auc - mean) * (r.auc - mean);
    var /= static_cast<double>(report.runs.size());
    CHECK(report.auc.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(report.auc.stddev == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
}

TEST_CASE("report serializations carry the schema") {
    const auto cohort = data::generate_cohort(tiny_generator(37));
    auto config = tiny_run_config();
    config.seeds = {4};
    config.epochs = 1;
    const auto report = eval::cross_validate(cohort, config, 1);
    const std::string csv = eval::report_csv(report);
    CHECK(csv.find("seed,fold,auc,auprc,recall,specificity,threshold") == 0);
    CHECK(csv.find("aggregate,mean,") != std::string::npos);
    CHECK(csv.find("aggregate,std,") != std::string::npos);
    const std::string history = eval::history_csv(report.histories[0]);
    CHECK(history.find("epoch,train_loss,valid_auc,valid_auprc") == 0);
    const std::string json_text = eval::report_json(report);
    CHECK(json_text.find("\"config\"") != std::string::npos);
    CHECK(json_text.find("\"threshold\"") != std::string::npos);
}
