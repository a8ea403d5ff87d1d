#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gvhd/errors.hpp"

namespace gvhd::ad {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

// Lightweight handle to a node on a tape. Copyable; the tape owns all storage.
class Tensor {
public:
    Tensor() = default;

    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }

    const Shape& shape() const;
    int64_t size() const;
    int rows() const;  // 2-D helpers; a vector [n] counts as 1 x n
    int cols() const;

    std::span<const double> data() const;
    // Adjoint filled by Tape::backward; zero before the first backward call.
    std::span<const double> grad() const;
    double value() const;  // scalar convenience

private:
    friend class Tape;
    Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

// A learnable array. Lives outside any tape; Tape::backward accumulates into
// `grad`, so running backward twice without zero_grad doubles it.
struct Parameter {
    std::string name;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string name_, Shape shape_);
    int64_t size() const { return static_cast<int64_t>(value.size()); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Reverse-mode tape. Nodes are recorded in topological order by construction;
// backward walks them in exact reverse order. reset() frees all intermediates.
class Tape {
public:
    struct Node {
        const char* op;
        Shape shape;
        std::vector<double> data;        // owned output buffer (empty for external leaves)
        const double* ext_data = nullptr;  // external storage (Parameter leaves)
        std::vector<double> grad;        // adjoint, allocated lazily by backward
        std::vector<int> inputs;
        std::function<void(Tape&, Node&)> backward;
        std::vector<double> cache;       // forward intermediates needed by backward
        Parameter* param = nullptr;      // flush target for parameter leaves

        std::span<const double> values() const {
            if (ext_data != nullptr) return {ext_data, static_cast<size_t>(numel(shape))};
            return {data.data(), data.size()};
        }
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves.
    Tensor leaf(Shape shape, std::span<const double> values);
    Tensor leaf(Parameter& p);  // references p.value; backward adds into p.grad
    Tensor scalar(double v) { return leaf({1, 1}, std::span<const double>(&v, 1)); }

    // Generic recording hook; also the extension point the gradcheck negative
    // control uses to register a deliberately wrong backward.
    Tensor record(const char* op, Shape shape, std::vector<int> inputs,
                  std::vector<double> data,
                  std::function<void(Tape&, Node&)> backward,
                  std::vector<double> cache = {});

    // Reverse sweep from a scalar loss. Adjoints of this pass accumulate into
    // every node's grad buffer and flush into Parameter::grad for leaves.
    void backward(const Tensor& loss);

    void reset();
    size_t size() const { return nodes_.size(); }

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    std::span<const double> values_of(int id) const { return nodes_[static_cast<size_t>(id)].values(); }
    std::span<double> grad_of(int id);  // allocates on first touch

private:
    std::vector<Node> nodes_;
};

// ---- Operations ------------------------------------------------------------
// Every op registers an exact backward on the tape of its inputs.

Tensor matmul(Tensor a, Tensor b);
Tensor add(Tensor a, Tensor b);                 // same shape
Tensor add_row_broadcast(Tensor a, Tensor bias);  // [m x n] + [n]
Tensor affine(Tensor a, double mul, double shift);  // mul * a + shift, elementwise
Tensor hadamard(Tensor a, Tensor b);
Tensor relu(Tensor a);
Tensor tanh_op(Tensor a);
Tensor sigmoid(Tensor a);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(Tensor a, Tensor b);
Tensor concat_rows(std::span<const Tensor> parts);  // stack [1 x n] rows -> [m x n]
Tensor slice_cols(Tensor a, int j0, int j1);
Tensor take_row(Tensor a, int r);               // [1 x n]
Tensor reshape(Tensor a, Shape shape);
Tensor transpose(Tensor a);
Tensor softmax_rows(Tensor a);
Tensor layer_norm(Tensor x, Tensor gain, Tensor bias);  // last axis, eps 1e-5
Tensor mean_rows(Tensor a);                     // mean over axis 0 -> [1 x n]
Tensor sum_all(Tensor a);                       // -> [1 x 1]
Tensor mean_all(Tensor a);
Tensor square(Tensor a);

// GRU over a [T x f] sequence; returns the final hidden state [1 x h].
// Gate equations: z = sig(x W_z + h U_z + b_z), r likewise,
// hcand = tanh(x W_h + (r . h) U_h + b_h), h' = (1 - z) . h + z . hcand.
struct GruCell {
    Tensor wz, wr, wh;  // [f x h]
    Tensor uz, ur, uh;  // [h x h]
    Tensor bz, br, bh;  // [h]
};
Tensor gru_sequence(Tensor x, const GruCell& cell, Tensor h0);

// Temporal convolution with kernels spanning the full feature width.
// x: [T x f], kernels: [c x k_t x f] (flattened row-major), bias: [c] -> [T x c].
// Zero padding (k_t - 1) / 2 on both ends; k_t must be odd and fit 2T + 1.
Tensor conv_time_fullwidth(Tensor x, Tensor kernels, Tensor bias);

// Trigonometric bases of a fixed time grid with learnable frequencies.
// omega: [K], g: T fixed time stamps -> [T x K] with sin(2 pi omega_k g_t).
Tensor sin_basis(Tensor omega, std::span<const double> g);
Tensor cos_basis(Tensor omega, std::span<const double> g);

// Row-wise branch select: out[i] = mask[i] != 0 ? on[i] : off[i].
// Gradients flow only into the selected branch.
Tensor select_rows(std::span<const double> mask, Tensor on, Tensor off);

// Fused two-layer feed-forward applied independently to every row:
// out = relu(x W1 + b1) W2 + b2. One tape node for the whole sweep; the
// per-cell lab branch FFNs run through this.
Tensor cell_ffn(Tensor x, Tensor w1, Tensor b1, Tensor w2, Tensor b2);

// Stack n scalar nodes into one [1 x n] vector.
Tensor stack_scalars(std::span<const Tensor> xs);

// Losses (scalar outputs).
Tensor pairwise_auc_margin(Tensor pos, Tensor neg);
Tensor bce(Tensor scores, std::span<const double> labels);          // clamp 1e-7
Tensor bce_from_logits(Tensor logits, std::span<const double> labels);

}  // namespace gvhd::ad
