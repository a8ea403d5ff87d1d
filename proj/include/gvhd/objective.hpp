#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gvhd/model.hpp"
#include "gvhd/patient.hpp"
#include "gvhd/rng.hpp"

namespace gvhd::train {

enum class Objective { AucMargin, Bce, BceProgressive };

struct Batch {
    std::vector<int> indices;
    std::vector<double> labels;
    int positive_count = 0;
};

struct CohortSplit {
    std::vector<int> positives;
    std::vector<int> negatives;

    static CohortSplit from(const std::vector<int>& indices, const std::vector<int>& labels);
    size_t size() const { return positives.size() + negatives.size(); }
    double prevalence() const {
        return size() == 0 ? 0.0 : static_cast<double>(positives.size()) / static_cast<double>(size());
    }
};

// Class-balanced batch construction: round(batch * ratio) positives drawn with
// replacement, the remainder negatives drawn without replacement from a pool
// reshuffled every epoch (trailing partial batch dropped).
class DualSampler {
public:
    DualSampler(CohortSplit split, int batch_size, double positive_ratio, uint64_t seed);

    void begin_epoch();
    int batches_per_epoch() const;
    Batch next_batch();
    int positives_per_batch() const { return positives_per_batch_; }

protected:
    CohortSplit split_;
    int batch_size_;
    int positives_per_batch_;
    Rng rng_;
    std::vector<int> negative_pool_;
    size_t pool_cursor_ = 0;
};

// The BCE + progressive-sampling comparison arm: positive fraction decays
// linearly from 0.5 at epoch 0 to the split prevalence at the final epoch.
class ProgressiveSampler {
public:
    ProgressiveSampler(CohortSplit split, int batch_size, int total_epochs, uint64_t seed);

    static double fraction_for_epoch(int epoch, int total_epochs, double prevalence);
    void begin_epoch(int epoch);
    int batches_per_epoch() const;
    Batch next_batch();

private:
    CohortSplit split_;
    int batch_size_;
    int total_epochs_;
    int positives_per_batch_ = 0;
    Rng rng_;
    std::vector<int> negative_pool_;
    size_t pool_cursor_ = 0;
};

// Plain shuffled minibatches for the BCE-alone arm.
class UniformSampler {
public:
    UniformSampler(std::vector<int> indices, const std::vector<int>& labels, int batch_size,
                   uint64_t seed);
    void begin_epoch();
    int batches_per_epoch() const;
    Batch next_batch();

private:
    std::vector<int> indices_;
    std::vector<int> index_labels_;
    int batch_size_;
    Rng rng_;
    std::vector<size_t> order_;
    size_t cursor_ = 0;
};

struct TrainSpec {
    int batch_size = 64;
    double positive_ratio = 0.5;
    double learning_rate = 0.001;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double proximal_weight = 1e-4;
    double clip_norm = 5.0;
    int epochs = 100;
    int steps_per_epoch = 0;  // 0 = one full pass over the negative pool
    Objective objective = Objective::AucMargin;
    uint64_t seed = 0;
};

// Momentum SGD with decoupled weight decay and an epoch-boundary proximal
// pull toward the parameters at the start of the epoch.
struct OptimizerState {
    std::vector<std::vector<double>> velocity;
    std::vector<std::vector<double>> theta_ref;
    double learning_rate = 0.001;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double proximal_weight = 0.0;
    double clip_norm = 0.0;  // <= 0 disables clipping
    int64_t step = 0;

    static OptimizerState init(const std::vector<ad::Parameter*>& params, const TrainSpec& spec);
    void begin_epoch(const std::vector<ad::Parameter*>& params);
};

void optimizer_step(const std::vector<ad::Parameter*>& params, OptimizerState& state);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_auc = 0.0;
    double valid_auprc = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = -1;  // -1 when no epochs ran
    double best_valid_auc = 0.0;
};

// Trains `params` in place over epochs of sampled batches; on return the
// parameters hold the best-validation-AUC epoch. Fully determined by
// (spec.seed, data order).
TrainResult train(model::ModelParams& params, const std::vector<data::PatientRecord>& patients,
                  const std::vector<int>& train_indices, const std::vector<int>& valid_indices,
                  const TrainSpec& spec);

// Forward-only scores for the given patients.
std::vector<double> score_patients(const model::ModelParams& params,
                                   const std::vector<data::PatientRecord>& patients,
                                   const std::vector<int>& indices);

// Convenience scalar evaluations of the loss ops (fresh tape per call).
double pairwise_auc_margin_value(std::span<const double> pos, std::span<const double> neg);
double bce_value(std::span<const double> scores, std::span<const double> labels);

}  // namespace gvhd::train
