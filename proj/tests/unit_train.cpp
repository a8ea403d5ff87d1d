#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "gvhd/metrics.hpp"
#include "gvhd/model.hpp"
#include "gvhd/objective.hpp"
#include "gvhd/rng.hpp"
#include "gvhd/tensor.hpp"

using namespace gvhd;
using ad::Tape;
using ad::Tensor;

namespace {

// Brute-force double loop, the loss oracle.
double pairwise_oracle(const std::vector<double>& pos, const std::vector<double>& neg) {
    double loss = 0.0;
    for (double p : pos) {
        for (double n : neg) loss += std::log(1.0 + std::exp(-(p - n)));
    }
    return loss / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

model::ModelConfig toy_config() {
    model::ModelConfig cfg;
    cfg.demo_features = 2;
    cfg.lab_features = 2;
    cfg.lab_steps = 3;
    cfg.dx_features = 2;
    cfg.dx_steps = 2;
    cfg.drug_features = 3;
    cfg.drug_steps = 4;
    cfg.hidden = 6;
    cfg.ffn_hidden = 6;
    cfg.freq_components = 2;
    cfg.extension_width = 2;
    cfg.branch_hidden = 3;
    cfg.heads = 2;
    cfg.kernel_time = 3;
    return cfg;
}

// Linearly separable toy cohort: one drug count carries the label.
std::vector<data::PatientRecord> toy_cohort(int n, double prevalence, uint64_t seed) {
    const auto cfg = toy_config();
    std::vector<data::PatientRecord> patients;
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        data::PatientRecord p;
        p.id = "toy" + std::to_string(i);
        p.label = rng.uniform() < prevalence ? 1 : 0;
        p.demo.resize(static_cast<size_t>(cfg.demo_features));
        for (double& v : p.demo) v = rng.uniform(-1, 1);
        auto block = [&](int steps, int features, bool mask) {
            data::ModalityBlock b;
            b.steps = steps;
            b.features = features;
            b.values.resize(static_cast<size_t>(steps) * features);
            for (double& v : b.values) v = rng.uniform(-0.5, 0.5);
            b.time_index.resize(static_cast<size_t>(steps));
            for (double& g : b.time_index) g = rng.uniform(0, 1);
            std::sort(b.time_index.begin(), b.time_index.end());
            if (mask) b.mask.assign(b.values.size(), 1.0);
            return b;
        };
        p.dx = block(cfg.dx_steps, cfg.dx_features, false);
        p.lab = block(cfg.lab_steps, cfg.lab_features, true);
        p.drug = block(cfg.drug_steps, cfg.drug_features, false);
        for (int t = 0; t < cfg.drug_steps; ++t) {
            p.drug.values[static_cast<size_t>(t) * cfg.drug_features] = p.label ? 3.0 : -3.0;
        }
        patients.push_back(std::move(p));
    }
    // Guarantee both classes.
    patients[0].label = 1;
    patients[1].label = 0;
    for (int t = 0; t < cfg.drug_steps; ++t) {
        patients[0].drug.values[static_cast<size_t>(t) * cfg.drug_features] = 3.0;
        patients[1].drug.values[static_cast<size_t>(t) * cfg.drug_features] = -3.0;
    }
    return patients;
}

}  // namespace

TEST_CASE("pairwise AUC margin loss fixed values") {
    {
        const std::vector<double> pos(3, 0.4), neg(5, 0.4);
        CHECK(train::pairwise_auc_margin_value(pos, neg) ==
              doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    {
        const std::vector<double> pos{1.0}, neg{0.0};
        CHECK(train::pairwise_auc_margin_value(pos, neg) ==
              doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
        CHECK(train::pairwise_auc_margin_value(pos, neg) == doctest::Approx(0.313262).epsilon(1e-5));
    }
    {
        const std::vector<double> pos{0.9, 0.8}, neg{0.1};
        const double value = train::pairwise_auc_margin_value(pos, neg);
        CHECK(value == doctest::Approx(pairwise_oracle(pos, neg)).epsilon(1e-14));
        CHECK(value == doctest::Approx(0.387142).epsilon(1e-4));
    }
}

TEST_CASE("pairwise loss equals the brute-force double loop on random batches") {
    Rng rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const int n_pos = 1 + static_cast<int>(rng.below(32));
        const int n_neg = 1 + static_cast<int>(rng.below(32));
        std::vector<double> pos(static_cast<size_t>(n_pos)), neg(static_cast<size_t>(n_neg));
        for (double& v : pos) v = rng.uniform(0, 1);
        for (double& v : neg) v = rng.uniform(0, 1);
        const double value = train::pairwise_auc_margin_value(pos, neg);
        CHECK(std::fabs(value - pairwise_oracle(pos, neg)) < 1e-12);
    }
}

TEST_CASE("pairwise loss depends on scores only through differences") {
    Rng rng(5);
    std::vector<double> pos(7), neg(9);
    for (double& v : pos) v = rng.uniform(0, 1);
    for (double& v : neg) v = rng.uniform(0, 1);
    const double base = train::pairwise_auc_margin_value(pos, neg);
    for (double shift : {-0.37, 0.0, 1.44}) {
        auto pos_s = pos, neg_s = neg;
        for (double& v : pos_s) v += shift;
        for (double& v : neg_s) v += shift;
        CHECK(std::fabs(train::pairwise_auc_margin_value(pos_s, neg_s) - base) < 1e-12);
    }
}

TEST_CASE("pairwise loss gradients: signs and finite differences") {
    Rng rng(7);
    std::vector<double> pos(4), neg(6);
    for (double& v : pos) v = rng.uniform(0, 1);
    for (double& v : neg) v = rng.uniform(0, 1);

    Tape tape;
    Tensor tp = tape.leaf({1, 4}, pos);
    Tensor tn = tape.leaf({1, 6}, neg);
    tape.backward(ad::pairwise_auc_margin(tp, tn));
    // Raising a positive score lowers the loss; raising a negative raises it.
    for (double g : tp.grad()) CHECK(g < 0.0);
    for (double g : tn.grad()) CHECK(g > 0.0);

    // Central differences at eps 1e-5 agree to 1e-6 relative.
    for (size_t i = 0; i < pos.size(); ++i) {
        auto up = pos, down = pos;
        up[i] += 1e-5;
        down[i] -= 1e-5;
        const double numeric = (pairwise_oracle(up, neg) - pairwise_oracle(down, neg)) / 2e-5;
        const double analytic = tp.grad()[i];
        CHECK(std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric),
                                                        1e-8}) < 1e-6);
    }
}

TEST_CASE("pairwise loss rejects empty sides") {
    Tape tape;
    const std::vector<double> some{0.5}, none;
    CHECK_THROWS_AS(ad::pairwise_auc_margin(tape.leaf({1, 1}, some), tape.leaf({1, 0}, none)),
                    ContractError);
}

TEST_CASE("bce loss fixed values") {
    {
        const std::vector<double> s(4, 0.5), y{1, 0, 1, 0};
        CHECK(train::bce_value(s, y) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    {
        const std::vector<double> s{1.0 - 1e-7, 1e-7}, y{1, 0};
        CHECK(train::bce_value(s, y) <= 1e-6);
    }
    {
        const std::vector<double> s{0.9, 0.1}, y{1, 0};
        CHECK(train::bce_value(s, y) == doctest::Approx(0.105361).epsilon(1e-5));
        CHECK(train::bce_value(s, y) ==
              doctest::Approx(-(std::log(0.9) + std::log(0.9)) / 2.0).epsilon(1e-12));
    }
}

TEST_CASE("dual sampler composition and determinism") {
    std::vector<int> labels(200, 0);
    for (int i = 0; i < 40; ++i) labels[static_cast<size_t>(i)] = 1;
    std::vector<int> indices(200);
    for (int i = 0; i < 200; ++i) indices[static_cast<size_t>(i)] = i;
    auto split = train::CohortSplit::from(indices, labels);

    train::DualSampler sampler(split, 64, 0.5, 99);
    sampler.begin_epoch();
    CHECK(sampler.batches_per_epoch() == 160 / 32);
    auto batch = sampler.next_batch();
    CHECK(batch.indices.size() == 64);
    CHECK(batch.positive_count == 32);
    int positives = 0;
    for (double y : batch.labels) positives += y == 1.0 ? 1 : 0;
    CHECK(positives == 32);

    // Five distinct positives cannot fill 32 slots without repeats.
    std::vector<int> few_labels(100, 0);
    for (int i = 0; i < 5; ++i) few_labels[static_cast<size_t>(i)] = 1;
    std::vector<int> few_indices(100);
    for (int i = 0; i < 100; ++i) few_indices[static_cast<size_t>(i)] = i;
    train::DualSampler few(train::CohortSplit::from(few_indices, few_labels), 64, 0.5, 1);
    few.begin_epoch();
    auto few_batch = few.next_batch();
    std::set<int> distinct;
    for (size_t i = 0; i < few_batch.indices.size(); ++i) {
        if (few_batch.labels[i] == 1.0) distinct.insert(few_batch.indices[i]);
    }
    CHECK(distinct.size() <= 5);
    CHECK(few_batch.positive_count == 32);

    // Same seed, same sequence.
    train::DualSampler s1(split, 16, 0.5, 1234), s2(split, 16, 0.5, 1234);
    for (int e = 0; e < 3; ++e) {
        s1.begin_epoch();
        s2.begin_epoch();
        for (int b = 0; b < s1.batches_per_epoch(); ++b) {
            CHECK(s1.next_batch().indices == s2.next_batch().indices);
        }
    }

    std::vector<int> no_pos(50, 0);
    std::vector<int> all_idx(50);
    for (int i = 0; i < 50; ++i) all_idx[static_cast<size_t>(i)] = i;
    CHECK_THROWS_AS(train::DualSampler(train::CohortSplit::from(all_idx, no_pos), 16, 0.5, 1),
                    TrainingError);
}

TEST_CASE("progressive sampler schedule endpoints and monotonicity") {
    const double prevalence = 0.05;
    CHECK(train::ProgressiveSampler::fraction_for_epoch(0, 40, prevalence) == 0.5);
    CHECK(train::ProgressiveSampler::fraction_for_epoch(39, 40, prevalence) ==
          doctest::Approx(prevalence));
    double prev = 1.0;
    for (int e = 0; e < 40; ++e) {
        const double f = train::ProgressiveSampler::fraction_for_epoch(e, 40, prevalence);
        CHECK(f <= prev + 1e-12);
        prev = f;
    }

    std::vector<int> labels(100, 0);
    for (int i = 0; i < 5; ++i) labels[static_cast<size_t>(i)] = 1;
    std::vector<int> indices(100);
    for (int i = 0; i < 100; ++i) indices[static_cast<size_t>(i)] = i;
    train::ProgressiveSampler sampler(train::CohortSplit::from(indices, labels), 20, 10, 3);
    sampler.begin_epoch(0);
    CHECK(sampler.next_batch().positive_count == 10);  // half at epoch 0
    sampler.begin_epoch(9);
    const int final_pos = sampler.next_batch().positive_count;
    CHECK(final_pos <= 2);  // prevalence 0.05 of 20, within one patient of round(1)
    CHECK(final_pos >= 1);
}

TEST_CASE("optimizer arithmetic matches the hand computation") {
    ad::Parameter theta("theta", {1});
    theta.value = {1.0};
    std::vector<ad::Parameter*> params{&theta};
    train::TrainSpec spec;
    spec.learning_rate = 0.001;
    spec.momentum = 0.9;
    spec.weight_decay = 0.0;
    spec.proximal_weight = 0.0;
    spec.clip_norm = 0.0;
    auto state = train::OptimizerState::init(params, spec);

    theta.grad = {1.0};
    train::optimizer_step(params, state);
    CHECK(theta.value[0] == doctest::Approx(0.999).epsilon(1e-15));

    theta.grad = {1.0};
    train::optimizer_step(params, state);
    CHECK(theta.value[0] == doctest::Approx(0.9971).epsilon(1e-12));  // 1 - lr (1 + 1.9)

    // Zero gradient: parameters hold still once velocity is empty, and the
    // velocity itself decays by the momentum factor.
    ad::Parameter still("still", {1});
    still.value = {2.0};
    std::vector<ad::Parameter*> sp{&still};
    auto s2 = train::OptimizerState::init(sp, spec);
    still.grad = {0.0};
    train::optimizer_step(sp, s2);
    CHECK(still.value[0] == 2.0);
    CHECK(s2.velocity[0][0] == 0.0);

    still.grad = {1.0};
    train::optimizer_step(sp, s2);
    const double v_after = s2.velocity[0][0];
    still.grad = {0.0};
    train::optimizer_step(sp, s2);
    CHECK(s2.velocity[0][0] == doctest::Approx(0.9 * v_after).epsilon(1e-15));
}

TEST_CASE("optimizer aborts on non-finite gradients with the parameter path") {
    ad::Parameter theta("lab.gru.w_z", {2});
    theta.value = {1.0, 2.0};
    theta.grad = {0.5, std::numeric_limits<double>::quiet_NaN()};
    std::vector<ad::Parameter*> params{&theta};
    train::TrainSpec spec;
    auto state = train::OptimizerState::init(params, spec);
    CHECK_THROWS_WITH_AS(train::optimizer_step(params, state), doctest::Contains("lab.gru.w_z"),
                         TrainingError);
}

TEST_CASE("gradient clipping bounds the global norm") {
    ad::Parameter a("a", {2}), b("b", {1});
    a.value = {0.0, 0.0};
    b.value = {0.0};
    a.grad = {30.0, 40.0};
    b.grad = {0.0};
    std::vector<ad::Parameter*> params{&a, &b};
    train::TrainSpec spec;
    spec.clip_norm = 5.0;
    spec.learning_rate = 1.0;
    spec.momentum = 0.0;
    spec.weight_decay = 0.0;
    spec.proximal_weight = 0.0;
    auto state = train::OptimizerState::init(params, spec);
    train::optimizer_step(params, state);
    // Norm 50 clipped to 5: step is -(30, 40) / 10.
    CHECK(a.value[0] == doctest::Approx(-3.0));
    CHECK(a.value[1] == doctest::Approx(-4.0));
}

TEST_CASE("zero-epoch training returns the initialization and no history") {
    auto patients = toy_cohort(20, 0.3, 1);
    auto cfg = toy_config();
    auto params = model::ModelParams::init(cfg, 1);
    const auto before = params.snapshot_values();
    train::TrainSpec spec;
    spec.epochs = 0;
    std::vector<int> train_idx, valid_idx;
    for (int i = 0; i < 16; ++i) train_idx.push_back(i);
    for (int i = 16; i < 20; ++i) valid_idx.push_back(i);
    const auto result = train::train(params, patients, train_idx, valid_idx, spec);
    CHECK(result.history.empty());
    CHECK(result.best_epoch == -1);
    const auto after = params.snapshot_values();
    for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("training separates a linearly separable toy cohort") {
    auto patients = toy_cohort(40, 0.35, 2);
    auto cfg = toy_config();
    auto params = model::ModelParams::init(cfg, 11);
    train::TrainSpec spec;
    spec.batch_size = 16;
    spec.positive_ratio = 0.5;
    spec.learning_rate = 0.01;
    spec.epochs = 50;
    spec.seed = 4;
    std::vector<int> all_idx(40);
    for (int i = 0; i < 40; ++i) all_idx[static_cast<size_t>(i)] = i;
    const auto result = train::train(params, patients, all_idx, all_idx, spec);
    REQUIRE(!result.history.empty());
    CHECK(result.best_valid_auc == doctest::Approx(1.0));

    const auto scores = train::score_patients(params, patients, all_idx);
    std::vector<int> labels;
    for (const auto& p : patients) labels.push_back(p.label);
    CHECK(eval::roc_auc(labels, scores) == doctest::Approx(1.0));
}

TEST_CASE("training history is reproducible from the seed") {
    auto patients = toy_cohort(30, 0.3, 3);
    auto cfg = toy_config();
    train::TrainSpec spec;
    spec.batch_size = 8;
    spec.epochs = 5;
    spec.seed = 21;
    std::vector<int> train_idx, valid_idx;
    for (int i = 0; i < 24; ++i) train_idx.push_back(i);
    for (int i = 24; i < 30; ++i) valid_idx.push_back(i);

    auto p1 = model::ModelParams::init(cfg, 21);
    auto p2 = model::ModelParams::init(cfg, 21);
    const auto r1 = train::train(p1, patients, train_idx, valid_idx, spec);
    const auto r2 = train::train(p2, patients, train_idx, valid_idx, spec);
    REQUIRE(r1.history.size() == r2.history.size());
    for (size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
        CHECK(r1.history[i].valid_auc == r2.history[i].valid_auc);
        CHECK(r1.history[i].valid_auprc == r2.history[i].valid_auprc);
    }
    const auto s1 = p1.snapshot_values(), s2 = p2.snapshot_values();
    for (size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);
}

TEST_CASE("bce and progressive objectives run end to end") {
    auto patients = toy_cohort(30, 0.3, 5);
    auto cfg = toy_config();
    std::vector<int> train_idx, valid_idx;
    for (int i = 0; i < 24; ++i) train_idx.push_back(i);
    for (int i = 24; i < 30; ++i) valid_idx.push_back(i);
    for (auto objective : {train::Objective::Bce, train::Objective::BceProgressive}) {
        auto params = model::ModelParams::init(cfg, 31);
        train::TrainSpec spec;
        spec.batch_size = 8;
        spec.epochs = 3;
        spec.seed = 31;
        spec.objective = objective;
        const auto result = train::train(params, patients, train_idx, valid_idx, spec);
        CHECK(result.history.size() == 3);
        for (const auto& row : result.history) CHECK(std::isfinite(row.train_loss));
    }
}
