#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "gvhd/baseline.hpp"
#include "gvhd/cohort.hpp"
#include "gvhd/metrics.hpp"
#include "gvhd/rng.hpp"
#include "json.hpp"

using namespace gvhd;
namespace fs = std::filesystem;

namespace {

data::GeneratorConfig tiny_generator(uint64_t seed, int n = 12, double prevalence = 0.25) {
    data::GeneratorConfig gen;
    gen.n_patients = n;
    gen.prevalence = prevalence;
    gen.missing_ratio = 0.5;
    gen.effect_size = 1.0;
    gen.seed = seed;
    gen.shapes = {3, 4, 5, 3, 4, 5, 6};
    return gen;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

data::PatientRecord plain_patient(const data::CohortShapes& sh) {
    data::PatientRecord p;
    p.id = "p0";
    p.demo.assign(static_cast<size_t>(sh.demo_features), 0.0);
    auto block = [](int steps, int features, bool mask) {
        data::ModalityBlock b;
        b.steps = steps;
        b.features = features;
        b.values.assign(static_cast<size_t>(steps) * features, 0.0);
        b.time_index.resize(static_cast<size_t>(steps));
        for (int t = 0; t < steps; ++t) b.time_index[static_cast<size_t>(t)] = steps > 1 ? t / (steps - 1.0) : 0.0;
        if (mask) b.mask.assign(b.values.size(), 1.0);
        return b;
    };
    p.dx = block(sh.dx_steps, sh.dx_features, false);
    p.lab = block(sh.lab_steps, sh.lab_features, true);
    p.drug = block(sh.drug_steps, sh.drug_features, false);
    return p;
}

}  // namespace

TEST_CASE("default cohort hits the published counts and missingness") {
    data::GeneratorConfig gen;  // defaults: 2100 patients, 2% prevalence, 72.9% missing
    gen.seed = 20250801;
    const auto cohort = data::generate_cohort(gen);
    CHECK(cohort.manifest.patients == 2100);
    CHECK(cohort.manifest.positives == 42);
    int positives = 0;
    for (const auto& p : cohort.patients) positives += p.label;
    CHECK(positives == 42);
    CHECK(cohort.manifest.realized_lab_missing == doctest::Approx(0.729).epsilon(0.014));
    CHECK(std::fabs(cohort.manifest.realized_lab_missing - 0.729) < 0.01);

    // Learnability floor: the logistic baseline on aggregated features clears
    // 0.7 held-out AUC at effect size 2.
    const auto labels = cohort.labels();
    std::vector<int> all(cohort.patients.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const auto split = data::stratified_split(all, labels, 0.25, 7);
    const auto scaler = data::fit_scaler(cohort.patients, split.rest);
    std::vector<std::vector<double>> x_train, x_test;
    std::vector<int> y_train, y_test;
    for (int idx : split.rest) {
        x_train.push_back(data::aggregate_baseline_features(
            data::apply_scaler(cohort.patients[static_cast<size_t>(idx)], scaler)));
        y_train.push_back(labels[static_cast<size_t>(idx)]);
    }
    for (int idx : split.held_out) {
        x_test.push_back(data::aggregate_baseline_features(
            data::apply_scaler(cohort.patients[static_cast<size_t>(idx)], scaler)));
        y_test.push_back(labels[static_cast<size_t>(idx)]);
    }
    const auto logistic = baseline::fit_logistic(x_train, y_train);
    std::vector<double> scores;
    for (const auto& row : x_test) scores.push_back(baseline::predict_logistic(logistic, row));
    CHECK(eval::roc_auc(y_test, scores) > 0.7);
}

TEST_CASE("generator determinism and label independence at zero effect") {
    const auto a = data::generate_cohort(tiny_generator(5, 40, 0.2));
    const auto b = data::generate_cohort(tiny_generator(5, 40, 0.2));
    REQUIRE(a.patients.size() == b.patients.size());
    for (size_t i = 0; i < a.patients.size(); ++i) {
        CHECK(a.patients[i].label == b.patients[i].label);
        CHECK(a.patients[i].lab.values == b.patients[i].lab.values);
        CHECK(a.patients[i].drug.values == b.patients[i].drug.values);
        CHECK(a.patients[i].dx.values == b.patients[i].dx.values);
        CHECK(a.patients[i].lab.mask == b.patients[i].lab.mask);
    }

    // All label dependence is gated by the effect size: negatives are
    // bit-identical across effect sizes, and at effect 0 positives take the
    // same no-shift path.
    auto zero_cfg = tiny_generator(9, 40, 0.2);
    zero_cfg.effect_size = 0.0;
    auto strong_cfg = tiny_generator(9, 40, 0.2);
    strong_cfg.effect_size = 3.0;
    const auto zero = data::generate_cohort(zero_cfg);
    const auto strong = data::generate_cohort(strong_cfg);
    bool some_positive_differs = false;
    for (size_t i = 0; i < zero.patients.size(); ++i) {
        REQUIRE(zero.patients[i].label == strong.patients[i].label);
        if (zero.patients[i].label == 0) {
            CHECK(zero.patients[i].lab.values == strong.patients[i].lab.values);
            CHECK(zero.patients[i].drug.values == strong.patients[i].drug.values);
            CHECK(zero.patients[i].dx.values == strong.patients[i].dx.values);
            CHECK(zero.patients[i].lab.mask == strong.patients[i].lab.mask);
            CHECK(zero.patients[i].lab.time_index == strong.patients[i].lab.time_index);
        } else if (zero.patients[i].lab.values != strong.patients[i].lab.values) {
            some_positive_differs = true;
        }
    }
    CHECK(some_positive_differs);
}

TEST_CASE("generator refuses configurations without enough positives") {
    auto gen = tiny_generator(1, 30, 0.02);  // 0.6 expected positives
    CHECK_THROWS_AS(data::generate_cohort(gen), ConfigError);
}

TEST_CASE("scaler matches the hand formula and is invertible") {
    data::CohortShapes sh{1, 1, 1, 1, 1, 1, 1};
    std::vector<data::PatientRecord> patients;
    for (double v : {1.0, 2.0, 3.0}) {
        auto p = plain_patient(sh);
        p.lab.values[0] = v;
        p.drug.values[0] = v * 2.0;
        patients.push_back(p);
    }
    const std::vector<int> train{0, 1, 2};
    const auto scaler = data::fit_scaler(patients, train);
    CHECK(scaler.lab_mean[0] == doctest::Approx(2.0));
    CHECK(scaler.lab_std[0] == doctest::Approx(0.8165).epsilon(1e-4));

    const double expected[] = {-1.2247, 0.0, 1.2247};
    for (int i = 0; i < 3; ++i) {
        const auto scaled = data::apply_scaler(patients[static_cast<size_t>(i)], scaler);
        CHECK(scaled.lab.values[0] == doctest::Approx(expected[i]).epsilon(1e-4));
        const auto back = data::invert_scaler(scaled, scaler);
        CHECK(back.lab.values[0] == doctest::Approx(patients[static_cast<size_t>(i)].lab.values[0])
                                        .epsilon(1e-9));
        CHECK(back.drug.values[0] ==
              doctest::Approx(patients[static_cast<size_t>(i)].drug.values[0]).epsilon(1e-9));
    }

    // Refitting on scaled data gives mean 0, std 1.
    std::vector<data::PatientRecord> scaled;
    for (const auto& p : patients) scaled.push_back(data::apply_scaler(p, scaler));
    const auto refit = data::fit_scaler(scaled, train);
    CHECK(refit.lab_mean[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(refit.lab_std[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(refit.drug_mean[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(refit.drug_std[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("scaler ignores masked lab cells and leaves them untouched") {
    data::CohortShapes sh{1, 1, 2, 1, 1, 1, 1};
    std::vector<data::PatientRecord> patients;
    for (double v : {1.0, 2.0, 3.0}) {
        auto p = plain_patient(sh);
        p.lab.values = {v, 0.0};  // second cell masked out
        p.lab.mask = {1.0, 0.0};
        patients.push_back(p);
    }
    const auto scaler = data::fit_scaler(patients, {0, 1, 2});
    CHECK(scaler.lab_mean[0] == doctest::Approx(2.0));  // masked cells excluded
    const auto scaled = data::apply_scaler(patients[0], scaler);
    CHECK(scaled.lab.values[1] == 0.0);  // sentinel untouched
    CHECK(scaled.lab.mask[1] == 0.0);
}

TEST_CASE("scaler statistics come from training patients only") {
    data::CohortShapes sh{1, 1, 1, 1, 1, 1, 1};
    std::vector<data::PatientRecord> patients;
    for (double v : {1.0, 2.0, 3.0, 1e9}) {  // the outlier sits in the test fold
        auto p = plain_patient(sh);
        p.lab.values[0] = v;
        patients.push_back(p);
    }
    const auto scaler = data::fit_scaler(patients, {0, 1, 2});
    CHECK(scaler.lab_mean[0] == doctest::Approx(2.0));  // unaffected by patient 3
    const auto tampered = data::fit_scaler(patients, {0, 1, 2, 3});
    CHECK(tampered.lab_mean[0] > 1e6);  // inclusion would be visible
}

TEST_CASE("stratified folds balance positives and partition the cohort") {
    {
        std::vector<int> labels(100, 0);
        for (int i = 0; i < 10; ++i) labels[static_cast<size_t>(i)] = 1;
        const auto folds = data::stratified_kfold(labels, 5, 3);
        for (const auto& fold : folds) {
            int pos = 0;
            for (int idx : fold) pos += labels[static_cast<size_t>(idx)];
            CHECK(pos == 2);
            CHECK(fold.size() == 20);
        }
    }
    {
        std::vector<int> labels(2100, 0);
        for (int i = 0; i < 42; ++i) labels[static_cast<size_t>(i * 50)] = 1;
        const auto folds = data::stratified_kfold(labels, 5, 11);
        std::vector<int> counts;
        std::vector<char> seen(labels.size(), 0);
        size_t total = 0;
        for (const auto& fold : folds) {
            int pos = 0;
            for (int idx : fold) {
                CHECK(!seen[static_cast<size_t>(idx)]);  // disjoint
                seen[static_cast<size_t>(idx)] = 1;
                pos += labels[static_cast<size_t>(idx)];
            }
            counts.push_back(pos);
            total += fold.size();
        }
        CHECK(total == labels.size());  // union covers everyone
        int nines = 0, eights = 0;
        for (int c : counts) {
            CHECK((c == 8 || c == 9));
            (c == 9 ? nines : eights) += 1;
        }
        CHECK(nines == 2);
        CHECK(eights == 3);
    }
    {
        std::vector<int> labels{1, 1, 0, 0, 0, 0};
        CHECK_THROWS_AS(data::stratified_kfold(labels, 3, 1), ConfigError);
    }
}

TEST_CASE("stratified split keeps positives on both sides") {
    std::vector<int> labels(50, 0);
    for (int i = 0; i < 5; ++i) labels[static_cast<size_t>(i)] = 1;
    std::vector<int> indices(50);
    for (int i = 0; i < 50; ++i) indices[static_cast<size_t>(i)] = i;
    const auto split = data::stratified_split(indices, labels, 0.2, 17);
    int held_pos = 0, rest_pos = 0;
    for (int idx : split.held_out) held_pos += labels[static_cast<size_t>(idx)];
    for (int idx : split.rest) rest_pos += labels[static_cast<size_t>(idx)];
    CHECK(held_pos >= 1);
    CHECK(rest_pos >= 1);
    CHECK(split.held_out.size() + split.rest.size() == 50);
}

TEST_CASE("baseline features have the documented layout") {
    data::CohortShapes sh;  // paper shapes
    auto p = plain_patient(sh);
    const auto features = data::aggregate_baseline_features(p);
    CHECK(features.size() == 4 + 1 + 74 * 3 + 280);
    CHECK(features.size() == 507);

    // All-zero diagnosis block: the any-diagnosis indicator is 0.
    CHECK(features[4] == 0.0);
    p.dx.values[3] = 1.0;
    CHECK(data::aggregate_baseline_features(p)[4] == 1.0);

    // An all-masked lab feature aggregates to the imputation mean (0 scaled).
    auto masked = plain_patient(sh);
    for (int t = 0; t < masked.lab.steps; ++t) {
        masked.lab.mask[static_cast<size_t>(t) * masked.lab.features + 2] = 0.0;
        masked.lab.values[static_cast<size_t>(t) * masked.lab.features + 2] = 0.0;
    }
    const auto agg = data::aggregate_baseline_features(masked);
    CHECK(agg[5 + 3 * 2 + 0] == 0.0);  // mean
    CHECK(agg[5 + 3 * 2 + 1] == 0.0);  // min
    CHECK(agg[5 + 3 * 2 + 2] == 0.0);  // max

    // An all-zero drug block contributes 280 trailing zeros.
    for (size_t i = features.size() - 280; i < features.size(); ++i) CHECK(features[i] == 0.0);
}

TEST_CASE("cohort files round-trip byte for byte") {
    const auto cohort = data::generate_cohort(tiny_generator(21, 16, 0.25));
    const fs::path dir1 = fs::temp_directory_path() / "gvhd_rt1";
    const fs::path dir2 = fs::temp_directory_path() / "gvhd_rt2";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    data::save_cohort(cohort, dir1.string());
    const auto loaded = data::load_cohort(dir1.string());
    data::save_cohort(loaded, dir2.string());
    CHECK(read_file(dir1 / "cohort.jsonl") == read_file(dir2 / "cohort.jsonl"));
    CHECK(read_file(dir1 / "cohort.manifest.json") == read_file(dir2 / "cohort.manifest.json"));
    CHECK(loaded.manifest.config_hash == cohort.manifest.config_hash);
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("tampered cohort files fail integrity checks by name") {
    const auto cohort = data::generate_cohort(tiny_generator(23, 14, 0.25));
    const fs::path dir = fs::temp_directory_path() / "gvhd_tamper";
    fs::remove_all(dir);
    data::save_cohort(cohort, dir.string());

    // Drop one lab value from the third patient: wrong width.
    {
        std::ifstream in(dir / "cohort.jsonl");
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
        auto pj = nlohmann::json::parse(lines[2]);
        auto values = pj["lab"]["values"].get<std::vector<double>>();
        values.pop_back();
        pj["lab"]["values"] = values;
        lines[2] = pj.dump();
        std::ofstream out(dir / "cohort.jsonl");
        for (const auto& l : lines) out << l << "\n";
    }
    try {
        data::load_cohort(dir.string());
        FAIL("expected an integrity error");
    } catch (const IntegrityError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("p000002") != std::string::npos);
        CHECK(msg.find("lab") != std::string::npos);
    }

    // Manifest patient count disagreeing with the data file.
    data::save_cohort(cohort, dir.string());
    {
        auto mj = nlohmann::json::parse(read_file(dir / "cohort.manifest.json"));
        mj["patients"] = cohort.manifest.patients + 1;
        std::ofstream out(dir / "cohort.manifest.json");
        out << mj.dump(2) << "\n";
    }
    CHECK_THROWS_AS(data::load_cohort(dir.string()), IntegrityError);
    fs::remove_all(dir);
}

TEST_CASE("signal placement is recorded in the manifest") {
    const auto cohort = data::generate_cohort(tiny_generator(29, 12, 0.25));
    CHECK(cohort.manifest.signal.drug_features.size() >= 1);
    CHECK(cohort.manifest.signal.lab_features.size() >= 1);
    CHECK(cohort.manifest.signal.dx_features.size() >= 1);

    data::GeneratorConfig paper;
    const auto placement = data::signal_placement(paper.shapes);
    CHECK(placement.drug_features.size() == 8);
    CHECK(placement.lab_features.size() == 6);
    CHECK(placement.dx_features.size() == 3);
    for (int f : placement.drug_features) CHECK(f < paper.shapes.drug_features);
}
