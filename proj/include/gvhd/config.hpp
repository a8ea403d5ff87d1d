#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gvhd/cohort.hpp"
#include "gvhd/model.hpp"
#include "gvhd/objective.hpp"

namespace gvhd {

// One JSON file drives every command. Defaults are the published settings
// (hidden 32, FFN 128, K 12, batch 64, dual-sampler ratio 0.5, lr 0.001,
// 5 folds x 3 seeds); unknown keys are a hard error.
struct RunConfig {
    // paths
    std::string cohort_dir = "cohort";
    std::string out_dir = "out";

    // model
    int hidden = 32;
    int ffn_hidden = 128;
    int freq_components = 12;
    int extension_width = 4;
    int branch_hidden = 16;
    int heads = 4;
    int kernel_time = 3;

    // training
    int batch_size = 64;
    double positive_ratio = 0.5;
    double learning_rate = 0.001;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double proximal_weight = 1e-4;
    double clip_norm = 5.0;
    int epochs = 100;
    int steps_per_epoch = 0;  // 0 = full pass over the negative pool per epoch
    double valid_fraction = 0.2;
    int k_folds = 5;
    std::vector<uint64_t> seeds = {1, 2, 3};

    train::Objective objective = train::Objective::AucMargin;

    // ablation switches
    bool use_time_index = true;
    bool missing_aware = true;
    bool use_fusion = true;

    // modality subset
    bool use_demo = true;
    bool use_lab = true;
    bool use_dx = true;
    bool use_drug = true;

    data::GeneratorConfig generator;

    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_file(const std::string& path);
    std::string to_json(int indent = 2) const;  // fully resolved snapshot

    model::ModelConfig model_config(const data::CohortShapes& shapes) const;
    train::TrainSpec train_spec(uint64_t run_seed) const;
    void validate() const;
};

std::string objective_name(train::Objective objective);
train::Objective objective_from_name(const std::string& name);

}  // namespace gvhd
