#include "gvhd/model.hpp"

#include <cmath>

#include "gvhd/rng.hpp"

namespace gvhd::model {

using ad::Tensor;

void ModelConfig::validate() const {
    if (hidden < 2) throw ConfigError("model: hidden width must be >= 2");
    if (heads < 1 || hidden % heads != 0) {
        throw ConfigError("model: hidden width " + std::to_string(hidden) +
                          " is not divisible by head count " + std::to_string(heads));
    }
    if (kernel_time % 2 == 0) {
        throw ConfigError("model: conv kernel height must be odd, got " + std::to_string(kernel_time));
    }
    if (freq_components < 1) throw ConfigError("model: K must be >= 1");
    if (extension_width < 1) throw ConfigError("model: extension width must be >= 1");
    if (modality_count() < 1) throw ConfigError("model: at least one modality must be enabled");
}

ad::Parameter* ModelParams::make(const std::string& name, ad::Shape shape) {
    store_.push_back(std::make_unique<ad::Parameter>(name, std::move(shape)));
    return store_.back().get();
}

namespace {

void fill_xavier(ad::Parameter* p, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : p->value) v = rng.uniform(-bound, bound);
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams params;
    params.cfg_ = cfg;
    Rng rng(seed, /*stream=*/0x6d6f64656cULL);

    const int d = cfg.hidden;
    const int ffn = cfg.ffn_hidden;

    auto make_ffn = [&](const std::string& prefix, int in, int hid, int out) {
        FfnWeights w;
        w.w1 = params.make(prefix + ".w1", {in, hid});
        w.b1 = params.make(prefix + ".b1", {hid});
        w.w2 = params.make(prefix + ".w2", {hid, out});
        w.b2 = params.make(prefix + ".b2", {out});
        fill_xavier(w.w1, in, hid, rng);
        fill_xavier(w.w2, hid, out, rng);
        return w;
    };
    auto make_gru = [&](const std::string& prefix, int in, int hid) {
        GruWeights w;
        w.wz = params.make(prefix + ".w_z", {in, hid});
        w.wr = params.make(prefix + ".w_r", {in, hid});
        w.wh = params.make(prefix + ".w_h", {in, hid});
        w.uz = params.make(prefix + ".u_z", {hid, hid});
        w.ur = params.make(prefix + ".u_r", {hid, hid});
        w.uh = params.make(prefix + ".u_h", {hid, hid});
        w.bz = params.make(prefix + ".b_z", {hid});
        w.br = params.make(prefix + ".b_r", {hid});
        w.bh = params.make(prefix + ".b_h", {hid});
        fill_xavier(w.wz, in, hid, rng);
        fill_xavier(w.wr, in, hid, rng);
        fill_xavier(w.wh, in, hid, rng);
        fill_xavier(w.uz, hid, hid, rng);
        fill_xavier(w.ur, hid, hid, rng);
        fill_xavier(w.uh, hid, hid, rng);
        return w;
    };

    if (cfg.use_demo) {
        params.demo_ffn = make_ffn("demo", cfg.demo_features, ffn, d);
    }
    if (cfg.use_lab) {
        params.lab_temporal.freq = params.make("lab.freq", {cfg.freq_components});
        params.lab_temporal.sin_coeff = params.make("lab.sin_coeff", {cfg.freq_components, cfg.lab_features});
        params.lab_temporal.cos_coeff = params.make("lab.cos_coeff", {cfg.freq_components, cfg.lab_features});
        // Frequencies start at 1..K cycles over the look-back window.
        for (int k = 0; k < cfg.freq_components; ++k) params.lab_temporal.freq->value[k] = k + 1;
        fill_xavier(params.lab_temporal.sin_coeff, cfg.freq_components, cfg.lab_features, rng);
        fill_xavier(params.lab_temporal.cos_coeff, cfg.freq_components, cfg.lab_features, rng);
        params.lab_obs = make_ffn("lab.obs", 2, cfg.branch_hidden, cfg.extension_width);
        params.lab_miss = make_ffn("lab.miss", 1, cfg.branch_hidden, cfg.extension_width);
        params.lab_gru = make_gru("lab.gru", cfg.lab_features * cfg.extension_width + 1, d);
    }
    if (cfg.use_dx) {
        params.dx_gru = make_gru("dx.gru", cfg.dx_features + (cfg.use_time_index ? 1 : 0), d);
    }
    if (cfg.use_drug) {
        const int width = cfg.drug_features + (cfg.use_time_index ? 1 : 0);
        params.drug_conv.kernels = params.make("drug.conv.kernels", {d, cfg.kernel_time, width});
        params.drug_conv.bias = params.make("drug.conv.bias", {d});
        fill_xavier(params.drug_conv.kernels, cfg.kernel_time * width, d, rng);
    }
    if (cfg.use_demo) params.align_demo = make_ffn("align.demo", d, ffn, d);
    if (cfg.use_lab) params.align_lab = make_ffn("align.lab", d, ffn, d);
    if (cfg.use_dx) params.align_dx = make_ffn("align.dx", d, ffn, d);
    if (cfg.use_drug) params.align_drug = make_ffn("align.drug", d, ffn, d);

    if (cfg.use_fusion) {
        params.attention.wq = params.make("fusion.w_q", {d, d});
        params.attention.wk = params.make("fusion.w_k", {d, d});
        params.attention.wv = params.make("fusion.w_v", {d, d});
        params.attention.wo = params.make("fusion.w_o", {d, d});
        fill_xavier(params.attention.wq, d, d, rng);
        fill_xavier(params.attention.wk, d, d, rng);
        fill_xavier(params.attention.wv, d, d, rng);
        fill_xavier(params.attention.wo, d, d, rng);
        params.fusion_norm.gain = params.make("fusion.ln.gain", {d});
        params.fusion_norm.bias = params.make("fusion.ln.bias", {d});
        for (double& v : params.fusion_norm.gain->value) v = 1.0;
    }
    params.head = make_ffn("head", cfg.modality_count() * d, ffn, 1);
    return params;
}

std::vector<ad::Parameter*> ModelParams::trainable() const {
    std::vector<ad::Parameter*> out;
    for (const auto& p : store_) {
        if (p->trainable) out.push_back(p.get());
    }
    return out;
}

ad::Parameter* ModelParams::find(const std::string& name) const {
    for (const auto& p : store_) {
        if (p->name == name) return p.get();
    }
    return nullptr;
}

int64_t ModelParams::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : store_) n += p->size();
    return n;
}

std::vector<std::vector<double>> ModelParams::snapshot_values() const {
    std::vector<std::vector<double>> snapshot;
    snapshot.reserve(store_.size());
    for (const auto& p : store_) snapshot.push_back(p->value);
    return snapshot;
}

void ModelParams::restore_values(const std::vector<std::vector<double>>& snapshot) {
    if (snapshot.size() != store_.size()) {
        throw ContractError("restore_values: snapshot does not match parameter layout");
    }
    for (size_t i = 0; i < store_.size(); ++i) store_[i]->value = snapshot[i];
}

// ---- encoders ---------------------------------------------------------------

ad::Tensor ffn2(ad::Tape& tape, Tensor x, const FfnWeights& w) {
    Tensor h = ad::relu(ad::add_row_broadcast(ad::matmul(x, tape.leaf(*w.w1)), tape.leaf(*w.b1)));
    return ad::add_row_broadcast(ad::matmul(h, tape.leaf(*w.w2)), tape.leaf(*w.b2));
}

ad::Tensor encode_demographics(ad::Tape& tape, std::span<const double> demo, const ModelParams& params) {
    const auto& cfg = params.config();
    if (static_cast<int>(demo.size()) != cfg.demo_features) {
        throw DimensionError("demographics: expected " + std::to_string(cfg.demo_features) +
                             " features, got " + std::to_string(demo.size()));
    }
    Tensor x = tape.leaf({1, cfg.demo_features}, demo);
    return ffn2(tape, x, params.demo_ffn);
}

namespace {

ad::GruCell bind_gru(ad::Tape& tape, const GruWeights& w) {
    return ad::GruCell{tape.leaf(*w.wz), tape.leaf(*w.wr), tape.leaf(*w.wh),
                       tape.leaf(*w.uz), tape.leaf(*w.ur), tape.leaf(*w.uh),
                       tape.leaf(*w.bz), tape.leaf(*w.br), tape.leaf(*w.bh)};
}

// Values matrix with the global time index appended as one extra column.
Tensor with_time_column(ad::Tape& tape, Tensor values, std::span<const double> g) {
    Tensor col = tape.leaf({static_cast<int>(g.size()), 1}, g);
    return ad::concat_cols(values, col);
}

Tensor zero_hidden(ad::Tape& tape, int h) {
    std::vector<double> zeros(static_cast<size_t>(h), 0.0);
    return tape.leaf({1, h}, zeros);
}

}  // namespace

ad::Tensor encode_diagnosis(ad::Tape& tape, const data::ModalityBlock& block, const ModelParams& params) {
    const auto& cfg = params.config();
    if (block.steps < 1) throw ContractError("diagnosis: empty sequence");
    if (block.features != cfg.dx_features) {
        throw DimensionError("diagnosis: expected " + std::to_string(cfg.dx_features) +
                             " features, got " + std::to_string(block.features));
    }
    Tensor x = tape.leaf({block.steps, block.features}, block.values);
    if (cfg.use_time_index) x = with_time_column(tape, x, block.time_index);
    return ad::gru_sequence(x, bind_gru(tape, params.dx_gru), zero_hidden(tape, cfg.hidden));
}

ad::Tensor lab_temporal_embedding(ad::Tape& tape, std::span<const double> time_index,
                                  const ModelParams& params) {
    Tensor omega = tape.leaf(*params.lab_temporal.freq);
    Tensor s = ad::sin_basis(omega, time_index);  // [T x K]
    Tensor c = ad::cos_basis(omega, time_index);
    Tensor p_sin = ad::matmul(s, tape.leaf(*params.lab_temporal.sin_coeff));
    Tensor p_cos = ad::matmul(c, tape.leaf(*params.lab_temporal.cos_coeff));
    return ad::add(p_sin, p_cos);  // [T x F_lab]
}

ad::Tensor masked_dimension_extension(ad::Tape& tape, const data::ModalityBlock& block,
                                      Tensor temporal, const ModelParams& params) {
    const auto& cfg = params.config();
    if (!block.has_mask()) throw ContractError("lab extension: block has no observation mask");
    const int T = block.steps, F = block.features;
    if (temporal.rows() != T || temporal.cols() != F) {
        throw DimensionError("lab extension: temporal embedding " + ad::shape_str(temporal.shape()) +
                             " does not match block [" + std::to_string(T) + " x " + std::to_string(F) + "]");
    }
    const int cells = T * F;
    const int e = cfg.extension_width;

    Tensor values = tape.leaf({cells, 1}, block.values);
    Tensor p_col = ad::reshape(temporal, {cells, 1});
    Tensor obs_in = ad::concat_cols(values, p_col);  // (value, P) pairs
    Tensor obs_out = ad::cell_ffn(obs_in, tape.leaf(*params.lab_obs.w1), tape.leaf(*params.lab_obs.b1),
                                  tape.leaf(*params.lab_obs.w2), tape.leaf(*params.lab_obs.b2));

    Tensor selected;
    if (cfg.missing_aware) {
        Tensor miss_out =
            ad::cell_ffn(p_col, tape.leaf(*params.lab_miss.w1), tape.leaf(*params.lab_miss.b1),
                         tape.leaf(*params.lab_miss.w2), tape.leaf(*params.lab_miss.b2));
        selected = ad::select_rows(block.mask, obs_out, miss_out);
    } else {
        // Missing cells were mean-imputed by the scaler (sentinel 0 == scaled
        // mean), so every cell goes through the observed branch.
        selected = obs_out;
    }
    // Row t*F + f, entry j lands at (t, f*e + j): a pure reshape.
    return ad::reshape(selected, {T, F * e});
}

ad::Tensor encode_lab(ad::Tape& tape, Tensor extended, std::span<const double> time_index,
                      const ModelParams& params) {
    const auto& cfg = params.config();
    if (extended.rows() != static_cast<int>(time_index.size())) {
        throw DimensionError("lab encoder: row count " + std::to_string(extended.rows()) +
                             " does not match time index length " + std::to_string(time_index.size()));
    }
    if (extended.rows() < 1) throw ContractError("lab encoder: empty sequence");
    Tensor x = with_time_column(tape, extended, time_index);
    return ad::gru_sequence(x, bind_gru(tape, params.lab_gru), zero_hidden(tape, cfg.hidden));
}

ad::Tensor encode_lab_block(ad::Tape& tape, const data::ModalityBlock& block, const ModelParams& params) {
    const auto& cfg = params.config();
    if (block.steps < 1) throw ContractError("lab: empty sequence");
    if (block.features != cfg.lab_features) {
        throw DimensionError("lab: expected " + std::to_string(cfg.lab_features) + " features, got " +
                             std::to_string(block.features));
    }
    Tensor temporal = lab_temporal_embedding(tape, block.time_index, params);
    Tensor extended = masked_dimension_extension(tape, block, temporal, params);
    return encode_lab(tape, extended, block.time_index, params);
}

ad::Tensor encode_drug(ad::Tape& tape, const data::ModalityBlock& block, const ModelParams& params) {
    const auto& cfg = params.config();
    if (block.steps < 1) throw ContractError("drug: empty sequence");
    if (block.features != cfg.drug_features) {
        throw DimensionError("drug: expected " + std::to_string(cfg.drug_features) + " features, got " +
                             std::to_string(block.features));
    }
    Tensor x = tape.leaf({block.steps, block.features}, block.values);
    if (cfg.use_time_index) x = with_time_column(tape, x, block.time_index);
    Tensor conv = ad::conv_time_fullwidth(x, tape.leaf(*params.drug_conv.kernels),
                                          tape.leaf(*params.drug_conv.bias));
    return ad::mean_rows(ad::relu(conv));  // global average pooling over time
}

// ---- fusion + head -----------------------------------------------------------

ad::Tensor align_modalities(ad::Tape& tape, std::span<const ad::Tensor> latents,
                            const ModelParams& params) {
    const auto& cfg = params.config();
    std::vector<const FfnWeights*> mlps;
    if (cfg.use_demo) mlps.push_back(&params.align_demo);
    if (cfg.use_lab) mlps.push_back(&params.align_lab);
    if (cfg.use_dx) mlps.push_back(&params.align_dx);
    if (cfg.use_drug) mlps.push_back(&params.align_drug);
    if (latents.size() != mlps.size()) {
        throw ContractError("align: expected " + std::to_string(mlps.size()) + " latents, got " +
                            std::to_string(latents.size()));
    }
    std::vector<Tensor> rows;
    for (size_t i = 0; i < latents.size(); ++i) rows.push_back(ffn2(tape, latents[i], *mlps[i]));
    return ad::concat_rows(rows);
}

ad::Tensor fuse(ad::Tape& tape, Tensor z, const ModelParams& params) {
    const auto& cfg = params.config();
    if (!cfg.use_fusion) return z;
    const int d = cfg.hidden;
    if (z.cols() != d) {
        throw DimensionError("fuse: expected width " + std::to_string(d) + ", got " +
                             ad::shape_str(z.shape()));
    }
    const int dh = d / cfg.heads;
    Tensor q = ad::matmul(z, tape.leaf(*params.attention.wq));
    Tensor k = ad::matmul(z, tape.leaf(*params.attention.wk));
    Tensor v = ad::matmul(z, tape.leaf(*params.attention.wv));
    std::vector<Tensor> heads;
    for (int h = 0; h < cfg.heads; ++h) {
        Tensor qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
        Tensor logits = ad::affine(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(dh), 0.0);
        Tensor attn = ad::softmax_rows(logits);  // rows sum to one over modality slots
        heads.push_back(ad::matmul(attn, vh));
    }
    Tensor mixed = ad::matmul(ad::concat_cols(heads), tape.leaf(*params.attention.wo));
    Tensor residual = ad::add(z, mixed);
    return ad::layer_norm(residual, tape.leaf(*params.fusion_norm.gain), tape.leaf(*params.fusion_norm.bias));
}

Prediction predict_head(ad::Tape& tape, Tensor fused, const ModelParams& params) {
    const auto& cfg = params.config();
    Tensor flat = ad::reshape(fused, {1, fused.rows() * fused.cols()});
    if (flat.cols() != cfg.modality_count() * cfg.hidden) {
        throw DimensionError("head: fused width " + std::to_string(flat.cols()) + " does not match " +
                             std::to_string(cfg.modality_count() * cfg.hidden));
    }
    Tensor logit = ffn2(tape, flat, params.head);
    return Prediction{ad::sigmoid(logit), logit};
}

Prediction forward(ad::Tape& tape, const data::PatientRecord& patient, const ModelParams& params) {
    const auto& cfg = params.config();
    auto check_block = [&](const data::ModalityBlock& block, int steps, int features, const char* name) {
        if (block.steps != steps || block.features != features) {
            throw DimensionError(std::string("forward: ") + name + " block is [" +
                                 std::to_string(block.steps) + " x " + std::to_string(block.features) +
                                 "], expected [" + std::to_string(steps) + " x " +
                                 std::to_string(features) + "]");
        }
    };
    std::vector<Tensor> latents;
    if (cfg.use_demo) {
        latents.push_back(encode_demographics(tape, patient.demo, params));
    }
    if (cfg.use_lab) {
        check_block(patient.lab, cfg.lab_steps, cfg.lab_features, "lab");
        if (!patient.lab.has_mask()) throw ContractError("forward: lab block has no observation mask");
        latents.push_back(encode_lab_block(tape, patient.lab, params));
    }
    if (cfg.use_dx) {
        check_block(patient.dx, cfg.dx_steps, cfg.dx_features, "diagnosis");
        latents.push_back(encode_diagnosis(tape, patient.dx, params));
    }
    if (cfg.use_drug) {
        check_block(patient.drug, cfg.drug_steps, cfg.drug_features, "drug");
        latents.push_back(encode_drug(tape, patient.drug, params));
    }
    Tensor z = align_modalities(tape, latents, params);
    Tensor fused = fuse(tape, z, params);
    return predict_head(tape, fused, params);
}

}  // namespace gvhd::model
