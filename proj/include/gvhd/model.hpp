#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gvhd/patient.hpp"
#include "gvhd/tensor.hpp"

namespace gvhd::model {

struct ModelConfig {
    // Data shapes; defaults mirror the cohort summary (lab 74 x 24, dx 20 x 12,
    // drug 280 x 24, 4 demographic features).
    int demo_features = 4;
    int lab_features = 74;
    int lab_steps = 24;
    int dx_features = 20;
    int dx_steps = 12;
    int drug_features = 280;
    int drug_steps = 24;

    // Architecture.
    int hidden = 32;           // common latent width d
    int ffn_hidden = 128;
    int freq_components = 12;  // K
    int extension_width = 4;   // e, outputs per lab cell
    int branch_hidden = 16;    // hidden width of the per-cell branch FFNs
    int heads = 4;
    int kernel_time = 3;       // k_t, odd

    // Ablation switches.
    bool use_time_index = true;
    bool missing_aware = true;
    bool use_fusion = true;

    // Modality subset (demo, lab, dx, drug).
    bool use_demo = true;
    bool use_lab = true;
    bool use_dx = true;
    bool use_drug = true;

    int modality_count() const {
        return (use_demo ? 1 : 0) + (use_lab ? 1 : 0) + (use_dx ? 1 : 0) + (use_drug ? 1 : 0);
    }
    void validate() const;
};

struct FfnWeights {
    ad::Parameter *w1 = nullptr, *b1 = nullptr, *w2 = nullptr, *b2 = nullptr;
};
struct GruWeights {
    ad::Parameter *wz = nullptr, *wr = nullptr, *wh = nullptr;
    ad::Parameter *uz = nullptr, *ur = nullptr, *uh = nullptr;
    ad::Parameter *bz = nullptr, *br = nullptr, *bh = nullptr;
};
struct LabTemporalWeights {
    ad::Parameter *freq = nullptr;       // [K]
    ad::Parameter *sin_coeff = nullptr;  // [K x F_lab]
    ad::Parameter *cos_coeff = nullptr;  // [K x F_lab]
};
struct ConvWeights {
    ad::Parameter *kernels = nullptr;  // [c x k_t x f]
    ad::Parameter *bias = nullptr;     // [c]
};
struct AttentionWeights {
    ad::Parameter *wq = nullptr, *wk = nullptr, *wv = nullptr, *wo = nullptr;  // [d x d]
};
struct LayerNormWeights {
    ad::Parameter *gain = nullptr, *bias = nullptr;  // [d]
};

// Every learnable array of the network, owned here with stable addresses and
// unique path-like names ("lab.gru.w_z"). Groups for disabled modalities stay
// null and contribute no parameters.
class ModelParams {
public:
    ModelParams() = default;
    static ModelParams init(const ModelConfig& cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    std::vector<ad::Parameter*> trainable() const;
    ad::Parameter* find(const std::string& name) const;
    int64_t parameter_count() const;

    std::vector<std::vector<double>> snapshot_values() const;
    void restore_values(const std::vector<std::vector<double>>& snapshot);

    FfnWeights demo_ffn;
    GruWeights dx_gru;
    LabTemporalWeights lab_temporal;
    FfnWeights lab_obs, lab_miss;
    GruWeights lab_gru;
    ConvWeights drug_conv;
    FfnWeights align_demo, align_lab, align_dx, align_drug;
    AttentionWeights attention;
    LayerNormWeights fusion_norm;
    FfnWeights head;

private:
    ad::Parameter* make(const std::string& name, ad::Shape shape);

    ModelConfig cfg_;
    std::vector<std::unique_ptr<ad::Parameter>> store_;
};

// Two-layer feed-forward: x [1 x in] -> ReLU hidden -> linear out.
ad::Tensor ffn2(ad::Tape& tape, ad::Tensor x, const FfnWeights& w);

// Modality encoders. Each returns a [1 x hidden] latent.
ad::Tensor encode_demographics(ad::Tape& tape, std::span<const double> demo, const ModelParams& params);
ad::Tensor encode_diagnosis(ad::Tape& tape, const data::ModalityBlock& block, const ModelParams& params);
ad::Tensor encode_drug(ad::Tape& tape, const data::ModalityBlock& block, const ModelParams& params);

// Lab pipeline pieces (exposed separately; encode_lab composes them).
ad::Tensor lab_temporal_embedding(ad::Tape& tape, std::span<const double> time_index,
                                  const ModelParams& params);  // [T x F_lab]
ad::Tensor masked_dimension_extension(ad::Tape& tape, const data::ModalityBlock& block,
                                      ad::Tensor temporal, const ModelParams& params);  // [T x F*e]
ad::Tensor encode_lab(ad::Tape& tape, ad::Tensor extended, std::span<const double> time_index,
                      const ModelParams& params);
ad::Tensor encode_lab_block(ad::Tape& tape, const data::ModalityBlock& block, const ModelParams& params);

// Fusion + head.
ad::Tensor align_modalities(ad::Tape& tape, std::span<const ad::Tensor> latents,
                            const ModelParams& params);  // Z [M x d], rows in demo, lab, dx, drug order
ad::Tensor fuse(ad::Tape& tape, ad::Tensor z, const ModelParams& params);

struct Prediction {
    ad::Tensor score;  // sigmoid output in (0, 1)
    ad::Tensor logit;  // pre-sigmoid, used by the BCE-with-logits training path
};
Prediction predict_head(ad::Tape& tape, ad::Tensor fused, const ModelParams& params);

// Full composition over one patient; honors all ablation flags in the config.
Prediction forward(ad::Tape& tape, const data::PatientRecord& patient, const ModelParams& params);

}  // namespace gvhd::model
