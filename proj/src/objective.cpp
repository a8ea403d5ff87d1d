#include "gvhd/objective.hpp"

#include <algorithm>
#include <cmath>

#include "gvhd/metrics.hpp"

namespace gvhd::train {

CohortSplit CohortSplit::from(const std::vector<int>& indices, const std::vector<int>& labels) {
    CohortSplit split;
    for (int idx : indices) {
        (labels.at(static_cast<size_t>(idx)) == 1 ? split.positives : split.negatives).push_back(idx);
    }
    return split;
}

namespace {

int positives_for(int batch_size, double fraction) {
    const int raw = static_cast<int>(std::lround(batch_size * fraction));
    // Round toward positives: a balanced batch never goes all-negative.
    return std::clamp(raw < 1 ? 1 : raw, 1, batch_size);
}

Batch draw_balanced(const CohortSplit& split, int batch_size, int n_pos, Rng& rng,
                    std::vector<int>& pool, size_t& cursor) {
    Batch batch;
    batch.indices.reserve(static_cast<size_t>(batch_size));
    for (int i = 0; i < n_pos; ++i) {
        const size_t pick = static_cast<size_t>(rng.below(split.positives.size()));
        batch.indices.push_back(split.positives[pick]);  // with replacement
        batch.labels.push_back(1.0);
    }
    for (int i = n_pos; i < batch_size; ++i) {
        batch.indices.push_back(pool[cursor++]);  // without replacement per epoch pass
        batch.labels.push_back(0.0);
    }
    batch.positive_count = n_pos;
    return batch;
}

}  // namespace

// ---- DualSampler ------------------------------------------------------------

DualSampler::DualSampler(CohortSplit split, int batch_size, double positive_ratio, uint64_t seed)
    : split_(std::move(split)),
      batch_size_(batch_size),
      positives_per_batch_(0),
      rng_(seed, 0x4455414cULL) {
    if (split_.positives.empty()) {
        throw TrainingError("dual sampler: training split contains no positive cases");
    }
    if (positive_ratio <= 0.0 || positive_ratio >= 1.0) {
        throw ConfigError("dual sampler: positive ratio must be in (0, 1)");
    }
    if (batch_size < 2) throw ConfigError("dual sampler: batch size must be >= 2");
    positives_per_batch_ = positives_for(batch_size, positive_ratio);
    if (positives_per_batch_ >= batch_size) positives_per_batch_ = batch_size - 1;
    begin_epoch();
}

void DualSampler::begin_epoch() {
    negative_pool_ = split_.negatives;
    rng_.shuffle(negative_pool_);
    pool_cursor_ = 0;
}

int DualSampler::batches_per_epoch() const {
    const int per_batch = batch_size_ - positives_per_batch_;
    return std::max(1, static_cast<int>(negative_pool_.size()) / per_batch);
}

Batch DualSampler::next_batch() {
    const int need = batch_size_ - positives_per_batch_;
    if (pool_cursor_ + static_cast<size_t>(need) > negative_pool_.size()) begin_epoch();
    return draw_balanced(split_, batch_size_, positives_per_batch_, rng_, negative_pool_, pool_cursor_);
}

// ---- ProgressiveSampler -------------------------------------------------------

ProgressiveSampler::ProgressiveSampler(CohortSplit split, int batch_size, int total_epochs,
                                       uint64_t seed)
    : split_(std::move(split)),
      batch_size_(batch_size),
      total_epochs_(total_epochs),
      rng_(seed, 0x50524f47ULL) {
    if (split_.positives.empty()) {
        throw TrainingError("progressive sampler: training split contains no positive cases");
    }
    begin_epoch(0);
}

double ProgressiveSampler::fraction_for_epoch(int epoch, int total_epochs, double prevalence) {
    if (total_epochs <= 1) return 0.5;
    const double t = std::clamp(static_cast<double>(epoch) / (total_epochs - 1), 0.0, 1.0);
    return 0.5 + (prevalence - 0.5) * t;  // linear decay toward the natural prevalence
}

void ProgressiveSampler::begin_epoch(int epoch) {
    const double fraction = fraction_for_epoch(epoch, total_epochs_, split_.prevalence());
    positives_per_batch_ = positives_for(batch_size_, fraction);
    if (positives_per_batch_ >= batch_size_) positives_per_batch_ = batch_size_ - 1;
    negative_pool_ = split_.negatives;
    rng_.shuffle(negative_pool_);
    pool_cursor_ = 0;
}

int ProgressiveSampler::batches_per_epoch() const {
    const int per_batch = batch_size_ - positives_per_batch_;
    return std::max(1, static_cast<int>(negative_pool_.size()) / per_batch);
}

Batch ProgressiveSampler::next_batch() {
    const int need = batch_size_ - positives_per_batch_;
    if (pool_cursor_ + static_cast<size_t>(need) > negative_pool_.size()) {
        negative_pool_ = split_.negatives;
        rng_.shuffle(negative_pool_);
        pool_cursor_ = 0;
    }
    return draw_balanced(split_, batch_size_, positives_per_batch_, rng_, negative_pool_, pool_cursor_);
}

// ---- UniformSampler ------------------------------------------------------------

UniformSampler::UniformSampler(std::vector<int> indices, const std::vector<int>& labels,
                               int batch_size, uint64_t seed)
    : indices_(std::move(indices)), batch_size_(batch_size), rng_(seed, 0x554e4946ULL) {
    index_labels_.reserve(indices_.size());
    for (int idx : indices_) index_labels_.push_back(labels.at(static_cast<size_t>(idx)));
    begin_epoch();
}

void UniformSampler::begin_epoch() {
    order_.resize(indices_.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
    cursor_ = 0;
}

int UniformSampler::batches_per_epoch() const {
    return std::max(1, static_cast<int>(indices_.size()) / batch_size_);
}

Batch UniformSampler::next_batch() {
    if (cursor_ + static_cast<size_t>(batch_size_) > order_.size()) begin_epoch();
    Batch batch;
    for (int i = 0; i < batch_size_ && cursor_ < order_.size(); ++i, ++cursor_) {
        const size_t slot = order_[cursor_];
        batch.indices.push_back(indices_[slot]);
        batch.labels.push_back(index_labels_[slot]);
        batch.positive_count += index_labels_[slot];
    }
    return batch;
}

// ---- optimizer --------------------------------------------------------------------

OptimizerState OptimizerState::init(const std::vector<ad::Parameter*>& params, const TrainSpec& spec) {
    OptimizerState state;
    state.learning_rate = spec.learning_rate;
    state.momentum = spec.momentum;
    state.weight_decay = spec.weight_decay;
    state.proximal_weight = spec.proximal_weight;
    state.clip_norm = spec.clip_norm;
    for (const auto* p : params) {
        state.velocity.emplace_back(p->value.size(), 0.0);
        state.theta_ref.push_back(p->value);
    }
    return state;
}

void OptimizerState::begin_epoch(const std::vector<ad::Parameter*>& params) {
    for (size_t i = 0; i < params.size(); ++i) theta_ref[i] = params[i]->value;
}

void optimizer_step(const std::vector<ad::Parameter*>& params, OptimizerState& state) {
    if (params.size() != state.velocity.size()) {
        throw ContractError("optimizer_step: state does not match parameter list");
    }
    for (const auto* p : params) {
        for (double g : p->grad) {
            if (!std::isfinite(g)) {
                throw TrainingError("optimizer_step: non-finite gradient in parameter '" + p->name + "'");
            }
        }
    }
    if (state.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto* p : params) {
            for (double g : p->grad) sq += g * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > state.clip_norm) {
            const double scale = state.clip_norm / norm;
            for (auto* p : params) {
                for (double& g : p->grad) g *= scale;
            }
        }
    }
    for (size_t i = 0; i < params.size(); ++i) {
        ad::Parameter& p = *params[i];
        auto& v = state.velocity[i];
        const auto& ref = state.theta_ref[i];
        for (size_t j = 0; j < v.size(); ++j) {
            const double g = p.grad[j] + state.proximal_weight * (p.value[j] - ref[j]);
            v[j] = state.momentum * v[j] + g;
            p.value[j] -= state.learning_rate * (v[j] + state.weight_decay * p.value[j]);
        }
    }
    ++state.step;
}

// ---- loss conveniences ---------------------------------------------------------------

double pairwise_auc_margin_value(std::span<const double> pos, std::span<const double> neg) {
    ad::Tape tape;
    return ad::pairwise_auc_margin(tape.leaf({1, static_cast<int>(pos.size())}, pos),
                                   tape.leaf({1, static_cast<int>(neg.size())}, neg))
        .value();
}

double bce_value(std::span<const double> scores, std::span<const double> labels) {
    ad::Tape tape;
    return ad::bce(tape.leaf({1, static_cast<int>(scores.size())}, scores), labels).value();
}

// ---- training loop ---------------------------------------------------------------------

std::vector<double> score_patients(const model::ModelParams& params,
                                   const std::vector<data::PatientRecord>& patients,
                                   const std::vector<int>& indices) {
    std::vector<double> scores;
    scores.reserve(indices.size());
    ad::Tape tape;
    for (int idx : indices) {
        scores.push_back(model::forward(tape, patients.at(static_cast<size_t>(idx)), params).score.value());
        tape.reset();
    }
    return scores;
}

namespace {

double batch_loss_and_backward(model::ModelParams& params,
                               const std::vector<data::PatientRecord>& patients, const Batch& batch,
                               Objective objective) {
    ad::Tape tape;
    std::vector<ad::Tensor> pos_scores, neg_scores, logits;
    for (size_t i = 0; i < batch.indices.size(); ++i) {
        auto pred = model::forward(tape, patients.at(static_cast<size_t>(batch.indices[i])), params);
        if (objective == Objective::AucMargin) {
            (batch.labels[i] == 1.0 ? pos_scores : neg_scores).push_back(pred.score);
        } else {
            logits.push_back(pred.logit);
        }
    }
    ad::Tensor loss;
    if (objective == Objective::AucMargin) {
        if (pos_scores.empty() || neg_scores.empty()) {
            throw TrainingError("auc_margin: batch is missing a class; the dual sampler should prevent this");
        }
        loss = ad::pairwise_auc_margin(ad::stack_scalars(pos_scores), ad::stack_scalars(neg_scores));
    } else {
        loss = ad::bce_from_logits(ad::stack_scalars(logits), batch.labels);
    }
    const double value = loss.value();
    tape.backward(loss);
    return value;
}

}  // namespace

TrainResult train(model::ModelParams& params, const std::vector<data::PatientRecord>& patients,
                  const std::vector<int>& train_indices, const std::vector<int>& valid_indices,
                  const TrainSpec& spec) {
    TrainResult result;
    if (spec.epochs <= 0) return result;

    const std::vector<int> labels = [&] {
        std::vector<int> ys(patients.size(), 0);
        for (size_t i = 0; i < patients.size(); ++i) ys[i] = patients[i].label;
        return ys;
    }();
    CohortSplit split = CohortSplit::from(train_indices, labels);
    auto trainable = params.trainable();
    OptimizerState state = OptimizerState::init(trainable, spec);

    const uint64_t sampler_seed = Rng::mix(spec.seed, 0x53414d50ULL);
    std::unique_ptr<DualSampler> dual;
    std::unique_ptr<ProgressiveSampler> progressive;
    std::unique_ptr<UniformSampler> uniform;
    switch (spec.objective) {
        case Objective::AucMargin:
            dual = std::make_unique<DualSampler>(split, spec.batch_size, spec.positive_ratio,
                                                 sampler_seed);
            break;
        case Objective::BceProgressive:
            progressive = std::make_unique<ProgressiveSampler>(split, spec.batch_size, spec.epochs,
                                                               sampler_seed);
            break;
        case Objective::Bce:
            uniform = std::make_unique<UniformSampler>(train_indices, labels, spec.batch_size,
                                                       sampler_seed);
            break;
    }

    std::vector<std::vector<double>> best_snapshot;
    std::vector<int> valid_labels;
    valid_labels.reserve(valid_indices.size());
    for (int idx : valid_indices) valid_labels.push_back(labels.at(static_cast<size_t>(idx)));

    for (int epoch = 0; epoch < spec.epochs; ++epoch) {
        state.begin_epoch(trainable);
        int batches = 0;
        if (dual) {
            dual->begin_epoch();
            batches = dual->batches_per_epoch();
        } else if (progressive) {
            progressive->begin_epoch(epoch);
            batches = progressive->batches_per_epoch();
        } else {
            uniform->begin_epoch();
            batches = uniform->batches_per_epoch();
        }
        if (spec.steps_per_epoch > 0) batches = std::min(batches, spec.steps_per_epoch);

        double loss_sum = 0.0;
        for (int b = 0; b < batches; ++b) {
            Batch batch = dual          ? dual->next_batch()
                          : progressive ? progressive->next_batch()
                                        : uniform->next_batch();
            for (auto* p : trainable) p->zero_grad();
            loss_sum += batch_loss_and_backward(params, patients, batch, spec.objective);
            optimizer_step(trainable, state);
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = batches > 0 ? loss_sum / batches : 0.0;
        const std::vector<double> valid_scores = score_patients(params, patients, valid_indices);
        record.valid_auc = eval::roc_auc(valid_labels, valid_scores);
        record.valid_auprc = eval::auprc(valid_labels, valid_scores);
        result.history.push_back(record);

        if (result.best_epoch < 0 || record.valid_auc > result.best_valid_auc) {
            result.best_epoch = epoch;
            result.best_valid_auc = record.valid_auc;
            best_snapshot = params.snapshot_values();
        }
    }

    if (!best_snapshot.empty()) params.restore_values(best_snapshot);
    return result;
}

}  // namespace gvhd::train
