#include "gvhd/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "gvhd/cohort.hpp"
#include "gvhd/gradcheck.hpp"
#include "gvhd/model.hpp"
#include "gvhd/objective.hpp"
#include "gvhd/rng.hpp"

namespace gvhd {

namespace {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

std::vector<double> draw(Rng& rng, int64_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<double> out(static_cast<size_t>(n));
    for (double& v : out) v = rng.uniform(lo, hi);
    return out;
}

// Keeps central differences off the ReLU kink.
std::vector<double> draw_off_kink(Rng& rng, int64_t n) {
    std::vector<double> out(static_cast<size_t>(n));
    for (double& v : out) {
        do {
            v = rng.uniform(-2.0, 2.0);
        } while (std::fabs(v) < 0.05);
    }
    return out;
}

// Linear functional of the op output: finite-difference truncation then comes
// from the op's own curvature only.
Tensor weighted_sum(Tape& tape, Tensor t, const std::vector<double>& weights) {
    Tensor w = tape.leaf(t.shape(), weights);
    return ad::sum_all(ad::hadamard(t, w));
}

// Single output entry as the objective. Summing op outputs lets gradient terms
// cancel, which blows up the relative error of central differences on
// curvature-heavy ops; one entry keeps the truncation proportional to the
// gradient itself.
Tensor pick_entry(Tensor t, int row, int col) {
    return ad::slice_cols(ad::take_row(t, row), col, col + 1);
}

using BuildFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;

struct OpCase {
    const char* name;
    std::function<double(Rng&, double)> run_once;  // max rel err of one randomized trial
};

double check(const BuildFn& fn, std::vector<std::vector<double>> inputs, std::vector<Shape> shapes,
             double eps) {
    return ad::finite_difference_gradcheck(fn, std::move(inputs), std::move(shapes), eps);
}

std::vector<OpCase> op_cases() {
    std::vector<OpCase> cases;
    cases.push_back({"matmul", [](Rng& rng, double eps) {
                         const int m = 2 + static_cast<int>(rng.below(3));
                         const int k = 2 + static_cast<int>(rng.below(3));
                         const int n = 2 + static_cast<int>(rng.below(3));
                         auto w = draw(rng, m * n, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::matmul(in[0], in[1]), w);
                             },
                             {draw(rng, m * k), draw(rng, k * n)}, {{m, k}, {k, n}}, eps);
                     }});
    cases.push_back({"add", [](Rng& rng, double eps) {
                         auto w = draw(rng, 12, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::add(in[0], in[1]), w);
                             },
                             {draw(rng, 12), draw(rng, 12)}, {{3, 4}, {3, 4}}, eps);
                     }});
    cases.push_back({"add_row_broadcast", [](Rng& rng, double eps) {
                         auto w = draw(rng, 12, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::add_row_broadcast(in[0], in[1]), w);
                             },
                             {draw(rng, 12), draw(rng, 4)}, {{3, 4}, {4}}, eps);
                     }});
    cases.push_back({"affine", [](Rng& rng, double eps) {
                         auto w = draw(rng, 8, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::affine(in[0], -1.7, 0.4), w);
                             },
                             {draw(rng, 8)}, {{2, 4}}, eps);
                     }});
    cases.push_back({"hadamard", [](Rng& rng, double eps) {
                         auto w = draw(rng, 9, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::hadamard(in[0], in[1]), w);
                             },
                             {draw(rng, 9), draw(rng, 9)}, {{3, 3}, {3, 3}}, eps);
                     }});
    cases.push_back({"relu", [](Rng& rng, double eps) {
                         auto w = draw(rng, 10, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::relu(in[0]), w);
                             },
                             {draw_off_kink(rng, 10)}, {{2, 5}}, eps);
                     }});
    cases.push_back({"tanh", [](Rng& rng, double eps) {
                         auto w = draw(rng, 10, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::tanh_op(in[0]), w);
                             },
                             {draw(rng, 10)}, {{2, 5}}, eps);
                     }});
    cases.push_back({"sigmoid", [](Rng& rng, double eps) {
                         auto w = draw(rng, 10, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::sigmoid(in[0]), w);
                             },
                             {draw(rng, 10)}, {{2, 5}}, eps);
                     }});
    cases.push_back({"concat_cols", [](Rng& rng, double eps) {
                         auto w = draw(rng, 15, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::concat_cols(in[0], in[1]), w);
                             },
                             {draw(rng, 6), draw(rng, 9)}, {{3, 2}, {3, 3}}, eps);
                     }});
    cases.push_back({"concat_rows", [](Rng& rng, double eps) {
                         auto w = draw(rng, 8, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 const Tensor parts[2] = {in[0], in[1]};
                                 return weighted_sum(t, ad::concat_rows(std::span<const Tensor>(parts, 2)),
                                                     w);
                             },
                             {draw(rng, 4), draw(rng, 4)}, {{1, 4}, {1, 4}}, eps);
                     }});
    cases.push_back({"slice_cols", [](Rng& rng, double eps) {
                         auto w = draw(rng, 6, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::slice_cols(in[0], 1, 4), w);
                             },
                             {draw(rng, 10)}, {{2, 5}}, eps);
                     }});
    cases.push_back({"take_row", [](Rng& rng, double eps) {
                         auto w = draw(rng, 4, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::take_row(in[0], 1), w);
                             },
                             {draw(rng, 12)}, {{3, 4}}, eps);
                     }});
    cases.push_back({"reshape", [](Rng& rng, double eps) {
                         auto w = draw(rng, 12, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::reshape(in[0], {2, 6}), w);
                             },
                             {draw(rng, 12)}, {{3, 4}}, eps);
                     }});
    cases.push_back({"transpose", [](Rng& rng, double eps) {
                         auto w = draw(rng, 12, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::transpose(in[0]), w);
                             },
                             {draw(rng, 12)}, {{3, 4}}, eps);
                     }});
    cases.push_back({"softmax_rows", [](Rng& rng, double eps) {
                         const int row = static_cast<int>(rng.below(3));
                         const int col = static_cast<int>(rng.below(4));
                         return check(
                             [row, col](Tape&, std::span<const Tensor> in) {
                                 return pick_entry(ad::softmax_rows(in[0]), row, col);
                             },
                             {draw(rng, 12)}, {{3, 4}}, eps);
                     }});
    cases.push_back({"layer_norm", [](Rng& rng, double eps) {
                         const int row = static_cast<int>(rng.below(3));
                         const int col = static_cast<int>(rng.below(4));
                         // rows with guaranteed spread keep the 1/sigma^2 curvature tame
                         std::vector<double> x(12);
                         for (int i = 0; i < 3; ++i) {
                             for (int j = 0; j < 4; ++j) {
                                 x[i * 4 + j] = 1.2 * j - 1.8 + rng.uniform(-0.4, 0.4);
                             }
                         }
                         return check(
                             [row, col](Tape&, std::span<const Tensor> in) {
                                 return pick_entry(ad::layer_norm(in[0], in[1], in[2]), row, col);
                             },
                             {x, draw(rng, 4, 0.5, 1.5), draw(rng, 4)},
                             {{3, 4}, {4}, {4}}, eps);
                     }});
    cases.push_back({"mean_rows", [](Rng& rng, double eps) {
                         auto w = draw(rng, 3, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::mean_rows(in[0]), w);
                             },
                             {draw(rng, 12)}, {{4, 3}}, eps);
                     }});
    cases.push_back({"mean_all", [](Rng& rng, double eps) {
                         return check(
                             [](Tape&, std::span<const Tensor> in) { return ad::mean_all(in[0]); },
                             {draw(rng, 12)}, {{4, 3}}, eps);
                     }});
    cases.push_back({"square", [](Rng& rng, double eps) {
                         auto w = draw(rng, 8, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::square(in[0]), w);
                             },
                             {draw(rng, 8)}, {{2, 4}}, eps);
                     }});
    cases.push_back({"gru_sequence", [](Rng& rng, double eps) {
                         const int T = 2, f = 2, h = 3;
                         const int unit = static_cast<int>(rng.below(h));
                         return check(
                             [unit](Tape&, std::span<const Tensor> in) {
                                 ad::GruCell cell{in[1], in[2], in[3], in[4], in[5],
                                                  in[6], in[7], in[8], in[9]};
                                 return pick_entry(ad::gru_sequence(in[0], cell, in[10]), 0, unit);
                             },
                             {draw(rng, T * f, -1.2, 1.2), draw(rng, f * h, -0.6, 0.6),
                              draw(rng, f * h, -0.6, 0.6), draw(rng, f * h, -0.6, 0.6),
                              draw(rng, h * h, -0.6, 0.6), draw(rng, h * h, -0.6, 0.6),
                              draw(rng, h * h, -0.6, 0.6), draw(rng, h, -0.4, 0.4),
                              draw(rng, h, -0.4, 0.4), draw(rng, h, -0.4, 0.4), draw(rng, h, -0.4, 0.4)},
                             {{T, f}, {f, h}, {f, h}, {f, h}, {h, h}, {h, h}, {h, h}, {h}, {h}, {h},
                              {1, h}},
                             eps);
                     }});
    cases.push_back({"conv_time_fullwidth", [](Rng& rng, double eps) {
                         const int T = 4, f = 3, c = 2, kt = 3;
                         auto w = draw(rng, T * c, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 // linear op: the weighted sum stays exact under FD
                                 return weighted_sum(t, ad::conv_time_fullwidth(in[0], in[1], in[2]), w);
                             },
                             {draw(rng, T * f), draw(rng, c * kt * f), draw(rng, c)},
                             {{T, f}, {c, kt, f}, {c}}, eps);
                     }});
    cases.push_back({"sin_basis", [](Rng& rng, double eps) {
                         const int T = 6, K = 3;
                         std::vector<double> g = draw(rng, T, 0.0, 1.0);
                         const int row = static_cast<int>(rng.below(T));
                         const int col = static_cast<int>(rng.below(K));
                         return check(
                             [g, row, col](Tape&, std::span<const Tensor> in) {
                                 return pick_entry(ad::sin_basis(in[0], g), row, col);
                             },
                             {draw(rng, K, 0.2, 1.6)}, {{K}}, eps);
                     }});
    cases.push_back({"cos_basis", [](Rng& rng, double eps) {
                         const int T = 6, K = 3;
                         std::vector<double> g = draw(rng, T, 0.0, 1.0);
                         const int row = static_cast<int>(rng.below(T));
                         const int col = static_cast<int>(rng.below(K));
                         return check(
                             [g, row, col](Tape&, std::span<const Tensor> in) {
                                 return pick_entry(ad::cos_basis(in[0], g), row, col);
                             },
                             {draw(rng, K, 0.2, 1.6)}, {{K}}, eps);
                     }});
    cases.push_back({"select_rows", [](Rng& rng, double eps) {
                         std::vector<double> mask(5);
                         for (double& m : mask) m = rng.bernoulli(0.5) ? 1.0 : 0.0;
                         auto w = draw(rng, 10, -1, 1);
                         return check(
                             [mask, w](Tape& t, std::span<const Tensor> in) {
                                 return weighted_sum(t, ad::select_rows(mask, in[0], in[1]), w);
                             },
                             {draw(rng, 10), draw(rng, 10)}, {{5, 2}, {5, 2}}, eps);
                     }});
    cases.push_back({"stack_scalars", [](Rng& rng, double eps) {
                         auto w = draw(rng, 3, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in) {
                                 std::vector<Tensor> parts = {in[0], in[1], in[2]};
                                 return weighted_sum(t, ad::stack_scalars(parts), w);
                             },
                             {draw(rng, 1), draw(rng, 1), draw(rng, 1)}, {{1, 1}, {1, 1}, {1, 1}}, eps);
                     }});
    cases.push_back({"cell_ffn", [](Rng& rng, double eps) {
                         const int n = 5, in = 2, hid = 3, out = 2;
                         auto w = draw(rng, n * out, -1, 1);
                         return check(
                             [w](Tape& t, std::span<const Tensor> in_t) {
                                 return weighted_sum(
                                     t, ad::cell_ffn(in_t[0], in_t[1], in_t[2], in_t[3], in_t[4]), w);
                             },
                             {draw(rng, n * in), draw(rng, in * hid, -0.9, 0.9),
                              draw_off_kink(rng, hid), draw(rng, hid * out, -0.9, 0.9),
                              draw(rng, out)},
                             {{n, in}, {in, hid}, {hid}, {hid, out}, {out}}, eps);
                     }});
    cases.push_back({"pairwise_auc_margin", [](Rng& rng, double eps) {
                         return check(
                             [](Tape&, std::span<const Tensor> in) {
                                 return ad::pairwise_auc_margin(in[0], in[1]);
                             },
                             {draw(rng, 4, 0.0, 1.0), draw(rng, 5, 0.0, 1.0)}, {{1, 4}, {1, 5}}, eps);
                     }});
    cases.push_back({"bce", [](Rng& rng, double eps) {
                         std::vector<double> labels(6);
                         for (double& y : labels) y = rng.bernoulli(0.5) ? 1.0 : 0.0;
                         return check(
                             [labels](Tape&, std::span<const Tensor> in) {
                                 return ad::bce(in[0], labels);
                             },
                             {draw(rng, 6, 0.15, 0.85)}, {{1, 6}}, eps);
                     }});
    cases.push_back({"bce_from_logits", [](Rng& rng, double eps) {
                         std::vector<double> labels(6);
                         for (double& y : labels) y = rng.bernoulli(0.5) ? 1.0 : 0.0;
                         return check(
                             [labels](Tape&, std::span<const Tensor> in) {
                                 return ad::bce_from_logits(in[0], labels);
                             },
                             {draw(rng, 6)}, {{1, 6}}, eps);
                     }});
    cases.push_back({"composite_3layer", [](Rng& rng, double eps) {
                         return check(
                             [](Tape&, std::span<const Tensor> in) {
                                 Tensor h1 = ad::sigmoid(ad::matmul(in[0], in[1]));
                                 Tensor h2 = ad::tanh_op(ad::matmul(h1, in[2]));
                                 return pick_entry(ad::matmul(h2, in[3]), 0, 0);
                             },
                             {draw(rng, 6, -1.5, 1.5), draw(rng, 12, -1.2, 1.2),
                              draw(rng, 16, -1.2, 1.2), draw(rng, 4, -1.2, 1.2)},
                             {{2, 3}, {3, 4}, {4, 4}, {4, 1}}, eps);
                     }});
    return cases;
}

model::ModelConfig mini_config() {
    model::ModelConfig cfg;
    cfg.demo_features = 3;
    cfg.lab_features = 3;
    cfg.lab_steps = 4;
    cfg.dx_features = 3;
    cfg.dx_steps = 3;
    cfg.drug_features = 4;
    cfg.drug_steps = 5;
    cfg.hidden = 6;
    cfg.ffn_hidden = 6;
    cfg.freq_components = 2;
    cfg.extension_width = 2;
    cfg.branch_hidden = 3;
    cfg.heads = 2;
    cfg.kernel_time = 3;
    return cfg;
}

data::GeneratorConfig mini_generator(uint64_t seed) {
    data::GeneratorConfig gen;
    gen.n_patients = 8;
    gen.prevalence = 0.5;
    gen.missing_ratio = 0.4;
    gen.effect_size = 1.0;
    gen.seed = seed;
    gen.shapes.demo_features = 3;
    gen.shapes.lab_features = 3;
    gen.shapes.lab_steps = 4;
    gen.shapes.dx_features = 3;
    gen.shapes.dx_steps = 3;
    gen.shapes.drug_features = 4;
    gen.shapes.drug_steps = 5;
    return gen;
}

}  // namespace

double end_to_end_gradcheck(uint64_t seed, double eps) {
    const data::Cohort cohort = generate_cohort(mini_generator(Rng::mix(seed, 0x4d494e49ULL)));
    // Standardize as the real pipeline does; raw synthetic blocks contain
    // exact zeros that would park ReLU pre-activations on the kink.
    std::vector<int> all(cohort.patients.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const data::Scaler scaler = data::fit_scaler(cohort.patients, all);
    std::vector<data::PatientRecord> scaled;
    scaled.reserve(cohort.patients.size());
    for (const auto& p : cohort.patients) scaled.push_back(data::apply_scaler(p, scaler));

    // 4-patient mini cohort: two positives, two negatives.
    std::vector<int> picks;
    for (int want : {1, 0}) {
        int found = 0;
        for (size_t i = 0; i < scaled.size() && found < 2; ++i) {
            if (scaled[i].label == want) {
                picks.push_back(static_cast<int>(i));
                ++found;
            }
        }
    }
    model::ModelParams params = model::ModelParams::init(mini_config(), Rng::mix(seed, 0x50415241ULL));
    auto trainable = params.trainable();

    auto eval = [&]() {
        ad::Tape tape;
        std::vector<Tensor> pos, neg;
        for (int idx : picks) {
            auto pred = model::forward(tape, scaled[static_cast<size_t>(idx)], params);
            (scaled[static_cast<size_t>(idx)].label == 1 ? pos : neg).push_back(pred.score);
        }
        return ad::pairwise_auc_margin(ad::stack_scalars(pos), ad::stack_scalars(neg)).value();
    };

    for (auto* p : trainable) p->zero_grad();
    {
        ad::Tape tape;
        std::vector<Tensor> pos, neg;
        for (int idx : picks) {
            auto pred = model::forward(tape, scaled[static_cast<size_t>(idx)], params);
            (scaled[static_cast<size_t>(idx)].label == 1 ? pos : neg).push_back(pred.score);
        }
        Tensor loss = ad::pairwise_auc_margin(ad::stack_scalars(pos), ad::stack_scalars(neg));
        tape.backward(loss);
    }

    std::vector<ad::GradcheckCoords> coords;
    coords.reserve(trainable.size());
    for (auto* p : trainable) {
        coords.push_back({p->name, std::span<double>(p->value.data(), p->value.size()),
                          std::span<const double>(p->grad.data(), p->grad.size())});
    }
    return ad::central_difference_check(eval, coords, eps).max_rel_err;
}

std::vector<GradcheckEntry> run_gradcheck_suite(uint64_t seed, int trials_per_op, double eps,
                                                double tolerance) {
    std::vector<GradcheckEntry> results;
    Rng rng(seed, 0x47434845ULL);
    for (const auto& op_case : op_cases()) {
        GradcheckEntry entry;
        entry.op = op_case.name;
        for (int trial = 0; trial < trials_per_op; ++trial) {
            entry.max_rel_err = std::max(entry.max_rel_err, op_case.run_once(rng, eps));
        }
        entry.pass = entry.max_rel_err < tolerance;
        results.push_back(entry);
    }
    GradcheckEntry end_to_end;
    end_to_end.op = "model_end_to_end";
    // Fixed fixture, verified to keep every ReLU pre-activation away from the
    // kink where central differences and the subgradient legitimately disagree.
    end_to_end.max_rel_err = end_to_end_gradcheck(kEndToEndFixtureSeed, eps);
    end_to_end.pass = end_to_end.max_rel_err < tolerance;
    results.push_back(end_to_end);
    return results;
}

}  // namespace gvhd
