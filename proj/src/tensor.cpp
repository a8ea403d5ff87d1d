#include "gvhd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gvhd::ad {

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += " x ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

int rows_of(const Shape& s) { return s.size() >= 2 ? s[s.size() - 2] : 1; }
int cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

constexpr double kBceClamp = 1e-7;

// Hot kernels: restrict-qualified so the inner loops vectorize.

// C[m x n] += A[m x k] . B[k x n]
void gemm_acc(const double* __restrict a, const double* __restrict b, double* __restrict c, int m,
              int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double ail = arow[l];
            const double* brow = b + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += ail * brow[j];
        }
    }
}

// C[m x k] += D[m x n] . B^T  (B is [k x n])
void gemm_nt_acc(const double* __restrict d, const double* __restrict b, double* __restrict c,
                 int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* drow = d + static_cast<size_t>(i) * n;
        double* crow = c + static_cast<size_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            const double* brow = b + static_cast<size_t>(l) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += drow[j] * brow[j];
            crow[l] += acc;
        }
    }
}

// C[k x n] += A^T . D  (A is [m x k], D is [m x n]); C stays cache-resident.
void gemm_tn_acc(const double* __restrict a, const double* __restrict d, double* __restrict c,
                 int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        const double* drow = d + static_cast<size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const double ail = arow[l];
            if (ail == 0.0) continue;
            double* crow = c + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += ail * drow[j];
        }
    }
}

// acc[n] += v . M  (M is [k x n], v length k)
void vecmat_acc(const double* __restrict v, const double* __restrict m, double* __restrict acc,
                int k, int n) {
    for (int l = 0; l < k; ++l) {
        const double vl = v[l];
        if (vl == 0.0) continue;
        const double* row = m + static_cast<size_t>(l) * n;
        for (int j = 0; j < n; ++j) acc[j] += vl * row[j];
    }
}

// Three gates at once: amortizes the pass over v and widens the FMA pipeline.
void vecmat_acc3(const double* __restrict v, const double* __restrict m0,
                 const double* __restrict m1, const double* __restrict m2,
                 double* __restrict acc0, double* __restrict acc1, double* __restrict acc2, int k,
                 int n) {
    for (int l = 0; l < k; ++l) {
        const double vl = v[l];
        if (vl == 0.0) continue;
        const size_t off = static_cast<size_t>(l) * n;
        const double* r0 = m0 + off;
        const double* r1 = m1 + off;
        const double* r2 = m2 + off;
        for (int j = 0; j < n; ++j) {
            acc0[j] += vl * r0[j];
            acc1[j] += vl * r1[j];
            acc2[j] += vl * r2[j];
        }
    }
}

// acc[k] += M . v  (dot of each M row with v)
void matvec_t_acc(const double* __restrict v, const double* __restrict m, double* __restrict acc,
                  int k, int n) {
    for (int l = 0; l < k; ++l) {
        const double* row = m + static_cast<size_t>(l) * n;
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += v[j] * row[j];
        acc[l] += s;
    }
}

// acc[k x n] += outer(u, v)
void outer_acc_kernel(const double* __restrict u, const double* __restrict v,
                      double* __restrict acc, int k, int n) {
    for (int l = 0; l < k; ++l) {
        const double ul = u[l];
        if (ul == 0.0) continue;
        double* row = acc + static_cast<size_t>(l) * n;
        for (int j = 0; j < n; ++j) row[j] += ul * v[j];
    }
}

}  // namespace

// ---- Parameter --------------------------------------------------------------

Parameter::Parameter(std::string name_, Shape shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
    const auto n = static_cast<size_t>(numel(shape));
    value.assign(n, 0.0);
    grad.assign(n, 0.0);
}

// ---- Tensor handle ----------------------------------------------------------

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
int64_t Tensor::size() const { return numel(shape()); }
int Tensor::rows() const { return rows_of(shape()); }
int Tensor::cols() const { return cols_of(shape()); }

std::span<const double> Tensor::data() const { return tape_->values_of(id_); }

std::span<const double> Tensor::grad() const {
    auto& node = tape_->node(id_);
    if (node.grad.empty()) node.grad.assign(static_cast<size_t>(numel(node.shape)), 0.0);
    return {node.grad.data(), node.grad.size()};
}

double Tensor::value() const {
    if (size() != 1) throw ContractError("Tensor::value requires a scalar, got " + shape_str(shape()));
    return data()[0];
}

// ---- Tape -------------------------------------------------------------------

Tensor Tape::leaf(Shape shape, std::span<const double> values) {
    if (static_cast<int64_t>(values.size()) != numel(shape)) {
        throw DimensionError("leaf: buffer length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    Node node;
    node.op = "leaf";
    node.shape = std::move(shape);
    node.data.assign(values.begin(), values.end());
    nodes_.push_back(std::move(node));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::leaf(Parameter& p) {
    Node node;
    node.op = "param";
    node.shape = p.shape;
    node.ext_data = p.value.data();
    node.param = &p;
    nodes_.push_back(std::move(node));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::record(const char* op, Shape shape, std::vector<int> inputs,
                    std::vector<double> data,
                    std::function<void(Tape&, Node&)> backward,
                    std::vector<double> cache) {
    if (static_cast<int64_t>(data.size()) != numel(shape)) {
        throw DimensionError(std::string(op) + ": output buffer length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    Node node;
    node.op = op;
    node.shape = std::move(shape);
    node.data = std::move(data);
    node.inputs = std::move(inputs);
    node.backward = std::move(backward);
    node.cache = std::move(cache);
    nodes_.push_back(std::move(node));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

std::span<double> Tape::grad_of(int id) {
    Node& node = nodes_[static_cast<size_t>(id)];
    if (node.grad.empty()) node.grad.assign(static_cast<size_t>(numel(node.shape)), 0.0);
    return {node.grad.data(), node.grad.size()};
}

void Tape::backward(const Tensor& loss) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
    if (numel(node(loss.id()).shape) != 1) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(node(loss.id()).shape));
    }
    // Pass-local adjoints; results are added into node.grad / Parameter::grad
    // at the end, so a second backward call doubles accumulated gradients.
    std::vector<std::vector<double>> adjoint(nodes_.size());
    adjoint[static_cast<size_t>(loss.id())].assign(1, 1.0);

    struct Scope {
        // Backward closures read/write adjoints through grad_of; temporarily
        // swap the pass-local buffers into the nodes.
        Tape& tape;
        std::vector<std::vector<double>>& adj;
        std::vector<std::vector<double>> saved;
        Scope(Tape& t, std::vector<std::vector<double>>& a) : tape(t), adj(a) {
            saved.resize(t.nodes_.size());
            for (size_t i = 0; i < t.nodes_.size(); ++i) saved[i] = std::move(t.nodes_[i].grad);
            for (size_t i = 0; i < t.nodes_.size(); ++i) t.nodes_[i].grad = std::move(adj[i]);
        }
        ~Scope() {
            for (size_t i = 0; i < tape.nodes_.size(); ++i) adj[i] = std::move(tape.nodes_[i].grad);
            for (size_t i = 0; i < tape.nodes_.size(); ++i) tape.nodes_[i].grad = std::move(saved[i]);
        }
    };

    {
        Scope scope(*this, adjoint);
        for (size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward) continue;
            if (n.grad.empty()) continue;  // no adjoint reached this node
            n.backward(*this, n);
        }
    }

    for (size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        const auto& delta = adjoint[i];
        if (n.param != nullptr) {
            auto& pg = n.param->grad;
            if (!delta.empty()) {
                for (size_t k = 0; k < pg.size(); ++k) pg[k] += delta[k];
            }
            continue;
        }
        if (delta.empty()) continue;
        if (n.grad.empty()) {
            n.grad = delta;
        } else {
            for (size_t k = 0; k < n.grad.size(); ++k) n.grad[k] += delta[k];
        }
    }
}

void Tape::reset() { nodes_.clear(); }

// ---- Helpers for op construction ---------------------------------------------

namespace {

Tape* same_tape(std::initializer_list<Tensor> ts) {
    Tape* tape = nullptr;
    for (const Tensor& t : ts) {
        if (!t.valid()) throw ContractError("op input is an empty tensor handle");
        if (tape == nullptr) tape = t.tape();
        if (t.tape() != tape) throw ContractError("op inputs live on different tapes");
    }
    return tape;
}

void require_2d(const Tensor& t, const char* op) {
    if (t.shape().size() > 2) {
        throw DimensionError(std::string(op) + ": expected a 1-D/2-D tensor, got " + shape_str(t.shape()));
    }
}

}  // namespace

// ---- matmul ------------------------------------------------------------------

Tensor matmul(Tensor a, Tensor b) {
    Tape* tape = same_tape({a, b});
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int m = a.rows(), k = a.cols();
    const int k2 = b.rows(), n = b.cols();
    if (k != k2) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    gemm_acc(av.data(), bv.data(), out.data(), m, k, n);
    const int aid = a.id(), bid = b.id();
    return tape->record(
        "matmul", {m, n}, {aid, bid}, std::move(out),
        [aid, bid, m, k, n](Tape& t, Tape::Node& node) {
            const double* dc = node.grad.data();
            const auto av2 = t.values_of(aid);
            const auto bv2 = t.values_of(bid);
            auto da = t.grad_of(aid);
            auto db = t.grad_of(bid);
            gemm_nt_acc(dc, bv2.data(), da.data(), m, k, n);  // dA = dC . B^T
            gemm_tn_acc(av2.data(), dc, db.data(), m, k, n);  // dB = A^T . dC
        });
}

// ---- elementwise -------------------------------------------------------------

Tensor add(Tensor a, Tensor b) {
    Tape* tape = same_tape({a, b});
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shapes disagree, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const auto av = a.data(), bv = b.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    const int aid = a.id(), bid = b.id();
    return tape->record("add", a.shape(), {aid, bid}, std::move(out),
                        [aid, bid](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            auto db = t.grad_of(bid);
                            for (size_t i = 0; i < node.grad.size(); ++i) {
                                da[i] += node.grad[i];
                                db[i] += node.grad[i];
                            }
                        });
}

Tensor add_row_broadcast(Tensor a, Tensor bias) {
    Tape* tape = same_tape({a, bias});
    const int m = a.rows(), n = a.cols();
    if (bias.size() != n) {
        throw DimensionError("add_row_broadcast: bias " + shape_str(bias.shape()) +
                             " does not match row width " + std::to_string(n));
    }
    const auto av = a.data(), bv = bias.data();
    std::vector<double> out(av.size());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            out[static_cast<size_t>(i) * n + j] = av[static_cast<size_t>(i) * n + j] + bv[j];
        }
    }
    const int aid = a.id(), bid = bias.id();
    return tape->record("add_row_broadcast", a.shape(), {aid, bid}, std::move(out),
                        [aid, bid, m, n](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            auto db = t.grad_of(bid);
                            for (int i = 0; i < m; ++i) {
                                for (int j = 0; j < n; ++j) {
                                    const double g = node.grad[static_cast<size_t>(i) * n + j];
                                    da[static_cast<size_t>(i) * n + j] += g;
                                    db[j] += g;
                                }
                            }
                        });
}

Tensor affine(Tensor a, double mul, double shift) {
    Tape* tape = same_tape({a});
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = mul * av[i] + shift;
    const int aid = a.id();
    return tape->record("affine", a.shape(), {aid}, std::move(out),
                        [aid, mul](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            for (size_t i = 0; i < node.grad.size(); ++i) da[i] += mul * node.grad[i];
                        });
}

Tensor hadamard(Tensor a, Tensor b) {
    Tape* tape = same_tape({a, b});
    if (a.shape() != b.shape()) {
        throw DimensionError("hadamard: shapes disagree, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const auto av = a.data(), bv = b.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    const int aid = a.id(), bid = b.id();
    return tape->record("hadamard", a.shape(), {aid, bid}, std::move(out),
                        [aid, bid](Tape& t, Tape::Node& node) {
                            const auto av2 = t.values_of(aid);
                            const auto bv2 = t.values_of(bid);
                            auto da = t.grad_of(aid);
                            auto db = t.grad_of(bid);
                            for (size_t i = 0; i < node.grad.size(); ++i) {
                                da[i] += node.grad[i] * bv2[i];
                                db[i] += node.grad[i] * av2[i];
                            }
                        });
}

Tensor relu(Tensor a) {
    Tape* tape = same_tape({a});
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    const int aid = a.id();
    return tape->record("relu", a.shape(), {aid}, std::move(out),
                        [aid](Tape& t, Tape::Node& node) {
                            const auto av2 = t.values_of(aid);
                            auto da = t.grad_of(aid);
                            for (size_t i = 0; i < node.grad.size(); ++i) {
                                if (av2[i] > 0.0) da[i] += node.grad[i];
                            }
                        });
}

Tensor tanh_op(Tensor a) {
    Tape* tape = same_tape({a});
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
    const int aid = a.id();
    return tape->record("tanh", a.shape(), {aid}, std::move(out),
                        [aid](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            for (size_t i = 0; i < node.grad.size(); ++i) {
                                const double y = node.data[i];
                                da[i] += node.grad[i] * (1.0 - y * y);
                            }
                        });
}

Tensor sigmoid(Tensor a) {
    Tape* tape = same_tape({a});
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(av[i]);
    const int aid = a.id();
    return tape->record("sigmoid", a.shape(), {aid}, std::move(out),
                        [aid](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            for (size_t i = 0; i < node.grad.size(); ++i) {
                                const double y = node.data[i];
                                da[i] += node.grad[i] * y * (1.0 - y);
                            }
                        });
}

// ---- shape ops ---------------------------------------------------------------

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    std::vector<Tensor> list(parts.begin(), parts.end());
    Tape* tape = list[0].tape();
    const int m = list[0].rows();
    int total = 0;
    std::vector<int> ids, widths;
    for (const Tensor& p : list) {
        if (p.tape() != tape) throw ContractError("concat_cols: inputs live on different tapes");
        if (p.rows() != m) {
            throw DimensionError("concat_cols: row counts disagree, " + shape_str(list[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        }
        ids.push_back(p.id());
        widths.push_back(p.cols());
        total += p.cols();
    }
    std::vector<double> out(static_cast<size_t>(m) * total);
    int offset = 0;
    for (size_t pi = 0; pi < list.size(); ++pi) {
        const auto pv = list[pi].data();
        const int w = widths[pi];
        for (int i = 0; i < m; ++i) {
            std::copy_n(pv.data() + static_cast<size_t>(i) * w, w,
                        out.data() + static_cast<size_t>(i) * total + offset);
        }
        offset += w;
    }
    return tape->record("concat_cols", {m, total}, ids, std::move(out),
                        [ids, widths, m, total](Tape& t, Tape::Node& node) {
                            int off = 0;
                            for (size_t pi = 0; pi < ids.size(); ++pi) {
                                auto dp = t.grad_of(ids[pi]);
                                const int w = widths[pi];
                                for (int i = 0; i < m; ++i) {
                                    const double* src = node.grad.data() + static_cast<size_t>(i) * total + off;
                                    double* dst = dp.data() + static_cast<size_t>(i) * w;
                                    for (int j = 0; j < w; ++j) dst[j] += src[j];
                                }
                                off += w;
                            }
                        });
}

Tensor concat_cols(Tensor a, Tensor b) {
    const Tensor parts[2] = {a, b};
    return concat_cols(std::span<const Tensor>(parts, 2));
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    std::vector<Tensor> list(parts.begin(), parts.end());
    Tape* tape = list[0].tape();
    const int n = list[0].cols();
    int total_rows = 0;
    std::vector<int> ids, row_counts;
    for (const Tensor& p : list) {
        if (p.tape() != tape) throw ContractError("concat_rows: inputs live on different tapes");
        if (p.cols() != n) {
            throw DimensionError("concat_rows: column counts disagree, " + shape_str(list[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        }
        ids.push_back(p.id());
        row_counts.push_back(p.rows());
        total_rows += p.rows();
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total_rows) * n);
    for (const Tensor& p : list) {
        const auto pv = p.data();
        out.insert(out.end(), pv.begin(), pv.end());
    }
    return tape->record("concat_rows", {total_rows, n}, ids, std::move(out),
                        [ids, row_counts, n](Tape& t, Tape::Node& node) {
                            size_t offset = 0;
                            for (size_t pi = 0; pi < ids.size(); ++pi) {
                                auto dp = t.grad_of(ids[pi]);
                                const size_t count = static_cast<size_t>(row_counts[pi]) * n;
                                for (size_t k = 0; k < count; ++k) dp[k] += node.grad[offset + k];
                                offset += count;
                            }
                        });
}

Tensor slice_cols(Tensor a, int j0, int j1) {
    Tape* tape = same_tape({a});
    const int m = a.rows(), n = a.cols();
    if (j0 < 0 || j1 > n || j0 >= j1) {
        throw DimensionError("slice_cols: range [" + std::to_string(j0) + ", " + std::to_string(j1) +
                             ") invalid for " + shape_str(a.shape()));
    }
    const int w = j1 - j0;
    const auto av = a.data();
    std::vector<double> out(static_cast<size_t>(m) * w);
    for (int i = 0; i < m; ++i) {
        std::copy_n(av.data() + static_cast<size_t>(i) * n + j0, w, out.data() + static_cast<size_t>(i) * w);
    }
    const int aid = a.id();
    return tape->record("slice_cols", {m, w}, {aid}, std::move(out),
                        [aid, m, n, j0, w](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            for (int i = 0; i < m; ++i) {
                                const double* src = node.grad.data() + static_cast<size_t>(i) * w;
                                double* dst = da.data() + static_cast<size_t>(i) * n + j0;
                                for (int j = 0; j < w; ++j) dst[j] += src[j];
                            }
                        });
}

Tensor take_row(Tensor a, int r) {
    Tape* tape = same_tape({a});
    const int m = a.rows(), n = a.cols();
    if (r < 0 || r >= m) {
        throw DimensionError("take_row: row " + std::to_string(r) + " out of range for " +
                             shape_str(a.shape()));
    }
    const auto av = a.data();
    std::vector<double> out(av.begin() + static_cast<size_t>(r) * n,
                            av.begin() + static_cast<size_t>(r + 1) * n);
    const int aid = a.id();
    return tape->record("take_row", {1, n}, {aid}, std::move(out),
                        [aid, r, n](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            double* dst = da.data() + static_cast<size_t>(r) * n;
                            for (int j = 0; j < n; ++j) dst[j] += node.grad[j];
                        });
}

Tensor reshape(Tensor a, Shape shape) {
    Tape* tape = same_tape({a});
    if (numel(shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    const auto av = a.data();
    std::vector<double> out(av.begin(), av.end());
    const int aid = a.id();
    return tape->record("reshape", std::move(shape), {aid}, std::move(out),
                        [aid](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            for (size_t i = 0; i < node.grad.size(); ++i) da[i] += node.grad[i];
                        });
}

Tensor transpose(Tensor a) {
    Tape* tape = same_tape({a});
    require_2d(a, "transpose");
    const int m = a.rows(), n = a.cols();
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
    }
    const int aid = a.id();
    return tape->record("transpose", {n, m}, {aid}, std::move(out),
                        [aid, m, n](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            for (int j = 0; j < n; ++j) {
                                for (int i = 0; i < m; ++i) {
                                    da[static_cast<size_t>(i) * n + j] += node.grad[static_cast<size_t>(j) * m + i];
                                }
                            }
                        });
}

// ---- reductions / normalizations ----------------------------------------------

Tensor softmax_rows(Tensor a) {
    Tape* tape = same_tape({a});
    const int m = a.rows(), n = a.cols();
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (int i = 0; i < m; ++i) {
        const double* x = av.data() + static_cast<size_t>(i) * n;
        double* y = out.data() + static_cast<size_t>(i) * n;
        double mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        for (int j = 0; j < n; ++j) y[j] /= sum;
    }
    const int aid = a.id();
    return tape->record("softmax_rows", a.shape(), {aid}, std::move(out),
                        [aid, m, n](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            for (int i = 0; i < m; ++i) {
                                const double* y = node.data.data() + static_cast<size_t>(i) * n;
                                const double* dy = node.grad.data() + static_cast<size_t>(i) * n;
                                double dot = 0.0;
                                for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
                                double* dst = da.data() + static_cast<size_t>(i) * n;
                                for (int j = 0; j < n; ++j) dst[j] += y[j] * (dy[j] - dot);
                            }
                        });
}

Tensor layer_norm(Tensor x, Tensor gain, Tensor bias) {
    Tape* tape = same_tape({x, gain, bias});
    const int m = x.rows(), n = x.cols();
    if (n < 2) throw DimensionError("layer_norm: last axis must be >= 2, got " + shape_str(x.shape()));
    if (gain.size() != n || bias.size() != n) {
        throw DimensionError("layer_norm: gain/bias must have length " + std::to_string(n));
    }
    constexpr double kEps = 1e-5;
    const auto xv = x.data(), gv = gain.data(), bv = bias.data();
    std::vector<double> out(xv.size());
    std::vector<double> cache(static_cast<size_t>(m) * (n + 1));  // xhat rows + inv_std per row
    for (int i = 0; i < m; ++i) {
        const double* row = xv.data() + static_cast<size_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += row[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= n;  // population variance
        const double inv_std = 1.0 / std::sqrt(var + kEps);
        double* xhat = cache.data() + static_cast<size_t>(i) * n;
        double* yrow = out.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            xhat[j] = (row[j] - mean) * inv_std;
            yrow[j] = xhat[j] * gv[j] + bv[j];
        }
        cache[static_cast<size_t>(m) * n + i] = inv_std;
    }
    const int xid = x.id(), gid = gain.id(), bid = bias.id();
    return tape->record(
        "layer_norm", x.shape(), {xid, gid, bid}, std::move(out),
        [xid, gid, bid, m, n](Tape& t, Tape::Node& node) {
            const auto gv2 = t.values_of(gid);
            auto dx = t.grad_of(xid);
            auto dg = t.grad_of(gid);
            auto db = t.grad_of(bid);
            for (int i = 0; i < m; ++i) {
                const double* xhat = node.cache.data() + static_cast<size_t>(i) * n;
                const double inv_std = node.cache[static_cast<size_t>(m) * n + i];
                const double* dy = node.grad.data() + static_cast<size_t>(i) * n;
                double sum_h = 0.0, sum_hx = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double h = dy[j] * gv2[j];
                    sum_h += h;
                    sum_hx += h * xhat[j];
                }
                double* dst = dx.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) {
                    const double h = dy[j] * gv2[j];
                    dst[j] += inv_std * (h - sum_h / n - xhat[j] * sum_hx / n);
                    dg[j] += dy[j] * xhat[j];
                    db[j] += dy[j];
                }
            }
        },
        std::move(cache));
}

Tensor mean_rows(Tensor a) {
    Tape* tape = same_tape({a});
    const int m = a.rows(), n = a.cols();
    const auto av = a.data();
    std::vector<double> out(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) out[j] += av[static_cast<size_t>(i) * n + j];
    }
    for (int j = 0; j < n; ++j) out[j] /= m;
    const int aid = a.id();
    return tape->record("mean_rows", {1, n}, {aid}, std::move(out),
                        [aid, m, n](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            for (int i = 0; i < m; ++i) {
                                for (int j = 0; j < n; ++j) {
                                    da[static_cast<size_t>(i) * n + j] += node.grad[j] / m;
                                }
                            }
                        });
}

Tensor sum_all(Tensor a) {
    Tape* tape = same_tape({a});
    const auto av = a.data();
    double s = 0.0;
    for (double v : av) s += v;
    const int aid = a.id();
    return tape->record("sum_all", {1, 1}, {aid}, {s},
                        [aid](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            for (size_t i = 0; i < da.size(); ++i) da[i] += node.grad[0];
                        });
}

Tensor mean_all(Tensor a) {
    Tape* tape = same_tape({a});
    const auto av = a.data();
    double s = 0.0;
    for (double v : av) s += v;
    const double inv = 1.0 / static_cast<double>(av.size());
    const int aid = a.id();
    return tape->record("mean_all", {1, 1}, {aid}, {s * inv},
                        [aid, inv](Tape& t, Tape::Node& node) {
                            auto da = t.grad_of(aid);
                            for (size_t i = 0; i < da.size(); ++i) da[i] += node.grad[0] * inv;
                        });
}

Tensor square(Tensor a) {
    Tape* tape = same_tape({a});
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
    const int aid = a.id();
    return tape->record("square", a.shape(), {aid}, std::move(out),
                        [aid](Tape& t, Tape::Node& node) {
                            const auto av2 = t.values_of(aid);
                            auto da = t.grad_of(aid);
                            for (size_t i = 0; i < node.grad.size(); ++i) da[i] += 2.0 * av2[i] * node.grad[i];
                        });
}

// ---- GRU ----------------------------------------------------------------------

Tensor gru_sequence(Tensor x, const GruCell& cell, Tensor h0) {
    Tape* tape = same_tape({x, cell.wz, cell.wr, cell.wh, cell.uz, cell.ur, cell.uh,
                            cell.bz, cell.br, cell.bh, h0});
    const int T = x.rows(), f = x.cols();
    const int h = h0.cols();
    if (T < 1) throw ContractError("gru_sequence: empty sequence (T = 0)");
    auto check = [&](const Tensor& w, int r, int c, const char* what) {
        if (w.rows() != r || w.cols() != c) {
            throw DimensionError(std::string("gru_sequence: ") + what + " has shape " +
                                 shape_str(w.shape()) + ", expected [" + std::to_string(r) + " x " +
                                 std::to_string(c) + "]");
        }
    };
    check(cell.wz, f, h, "W_z"); check(cell.wr, f, h, "W_r"); check(cell.wh, f, h, "W_h");
    check(cell.uz, h, h, "U_z"); check(cell.ur, h, h, "U_r"); check(cell.uh, h, h, "U_h");
    if (cell.bz.size() != h || cell.br.size() != h || cell.bh.size() != h) {
        throw DimensionError("gru_sequence: bias length must equal hidden size " + std::to_string(h));
    }

    const auto xv = x.data();
    const auto wz = cell.wz.data(), wr = cell.wr.data(), wh = cell.wh.data();
    const auto uz = cell.uz.data(), ur = cell.ur.data(), uh = cell.uh.data();
    const auto bz = cell.bz.data(), br = cell.br.data(), bh = cell.bh.data();
    const auto h0v = h0.data();

    // cache layout per step: z, r, hcand, h_prev (4 vectors of width h)
    std::vector<double> cache(static_cast<size_t>(T) * 4 * h);
    std::vector<double> hprev(h0v.begin(), h0v.end());
    std::vector<double> az(h), ar(h), ah(h), rh(h);

    for (int t = 0; t < T; ++t) {
        const double* xt = xv.data() + static_cast<size_t>(t) * f;
        std::copy_n(bz.data(), h, az.data());
        std::copy_n(br.data(), h, ar.data());
        std::copy_n(bh.data(), h, ah.data());
        vecmat_acc3(xt, wz.data(), wr.data(), wh.data(), az.data(), ar.data(), ah.data(), f, h);
        vecmat_acc(hprev.data(), uz.data(), az.data(), h, h);
        vecmat_acc(hprev.data(), ur.data(), ar.data(), h, h);
        double* cz = cache.data() + (static_cast<size_t>(t) * 4 + 0) * h;
        double* cr = cache.data() + (static_cast<size_t>(t) * 4 + 1) * h;
        double* ch = cache.data() + (static_cast<size_t>(t) * 4 + 2) * h;
        double* cp = cache.data() + (static_cast<size_t>(t) * 4 + 3) * h;
        std::copy_n(hprev.data(), h, cp);
        for (int j = 0; j < h; ++j) {
            cz[j] = stable_sigmoid(az[j]);
            cr[j] = stable_sigmoid(ar[j]);
            rh[j] = cr[j] * hprev[j];
        }
        vecmat_acc(rh.data(), uh.data(), ah.data(), h, h);
        for (int j = 0; j < h; ++j) {
            ch[j] = std::tanh(ah[j]);
            hprev[j] = (1.0 - cz[j]) * cp[j] + cz[j] * ch[j];
        }
    }

    const int xid = x.id();
    const int wzid = cell.wz.id(), wrid = cell.wr.id(), whid = cell.wh.id();
    const int uzid = cell.uz.id(), urid = cell.ur.id(), uhid = cell.uh.id();
    const int bzid = cell.bz.id(), brid = cell.br.id(), bhid = cell.bh.id();
    const int h0id = h0.id();

    return tape->record(
        "gru_sequence", {1, h},
        {xid, wzid, wrid, whid, uzid, urid, uhid, bzid, brid, bhid, h0id},
        std::move(hprev),
        [=](Tape& t, Tape::Node& node) {
            const auto xv2 = t.values_of(xid);
            const auto wz2 = t.values_of(wzid), wr2 = t.values_of(wrid), wh2 = t.values_of(whid);
            const auto uz2 = t.values_of(uzid), ur2 = t.values_of(urid), uh2 = t.values_of(uhid);
            auto dx = t.grad_of(xid);
            auto dwz = t.grad_of(wzid), dwr = t.grad_of(wrid), dwh = t.grad_of(whid);
            auto duz = t.grad_of(uzid), dur = t.grad_of(urid), duh = t.grad_of(uhid);
            auto dbz = t.grad_of(bzid), dbr = t.grad_of(brid), dbh = t.grad_of(bhid);
            auto dh0 = t.grad_of(h0id);

            std::vector<double> dh(node.grad.begin(), node.grad.end());
            std::vector<double> daz(h), dar(h), dah(h), drh(h), dh_next(h);

            for (int t_step = T - 1; t_step >= 0; --t_step) {
                const double* cz = node.cache.data() + (static_cast<size_t>(t_step) * 4 + 0) * h;
                const double* cr = node.cache.data() + (static_cast<size_t>(t_step) * 4 + 1) * h;
                const double* ch = node.cache.data() + (static_cast<size_t>(t_step) * 4 + 2) * h;
                const double* cp = node.cache.data() + (static_cast<size_t>(t_step) * 4 + 3) * h;
                const double* xt = xv2.data() + static_cast<size_t>(t_step) * f;

                std::fill(dh_next.begin(), dh_next.end(), 0.0);
                for (int j = 0; j < h; ++j) {
                    const double g = dh[j];
                    const double dz = g * (ch[j] - cp[j]);
                    daz[j] = dz * cz[j] * (1.0 - cz[j]);
                    dah[j] = g * cz[j] * (1.0 - ch[j] * ch[j]);
                    dh_next[j] = g * (1.0 - cz[j]);
                }
                // through hcand: ah = x W_h + (r . hprev) U_h + b_h
                std::fill(drh.begin(), drh.end(), 0.0);
                matvec_t_acc(dah.data(), uh2.data(), drh.data(), h, h);
                for (int j = 0; j < h; ++j) {
                    dar[j] = drh[j] * cp[j] * cr[j] * (1.0 - cr[j]);
                    dh_next[j] += drh[j] * cr[j];
                    dbh[j] += dah[j];
                    dbz[j] += daz[j];
                    dbr[j] += dar[j];
                }
                // weight gradients
                outer_acc_kernel(xt, daz.data(), dwz.data(), f, h);
                outer_acc_kernel(xt, dar.data(), dwr.data(), f, h);
                outer_acc_kernel(xt, dah.data(), dwh.data(), f, h);
                outer_acc_kernel(cp, daz.data(), duz.data(), h, h);
                outer_acc_kernel(cp, dar.data(), dur.data(), h, h);
                {
                    std::vector<double> rh_prev(h);
                    for (int j = 0; j < h; ++j) rh_prev[j] = cr[j] * cp[j];
                    outer_acc_kernel(rh_prev.data(), dah.data(), duh.data(), h, h);
                }
                // input gradient
                {
                    double* dxt = dx.data() + static_cast<size_t>(t_step) * f;
                    matvec_t_acc(daz.data(), wz2.data(), dxt, f, h);
                    matvec_t_acc(dar.data(), wr2.data(), dxt, f, h);
                    matvec_t_acc(dah.data(), wh2.data(), dxt, f, h);
                }
                // into h_{t-1} through the U products
                matvec_t_acc(daz.data(), uz2.data(), dh_next.data(), h, h);
                matvec_t_acc(dar.data(), ur2.data(), dh_next.data(), h, h);
                dh.swap(dh_next);
            }
            for (int j = 0; j < h; ++j) dh0[j] += dh[j];
        },
        std::move(cache));
}

// ---- temporal convolution -------------------------------------------------------

Tensor conv_time_fullwidth(Tensor x, Tensor kernels, Tensor bias) {
    Tape* tape = same_tape({x, kernels, bias});
    const int T = x.rows(), f = x.cols();
    const auto& ks = kernels.shape();
    if (ks.size() != 3) {
        throw DimensionError("conv_time_fullwidth: kernels must be [c x k_t x f], got " + shape_str(ks));
    }
    const int c = ks[0], kt = ks[1], kf = ks[2];
    if (kt % 2 == 0) throw ConfigError("conv_time_fullwidth: kernel height must be odd, got " + std::to_string(kt));
    if (kt > 2 * T + 1) {
        throw ConfigError("conv_time_fullwidth: kernel height " + std::to_string(kt) +
                          " exceeds 2T + 1 = " + std::to_string(2 * T + 1));
    }
    if (kf != f) {
        throw DimensionError("conv_time_fullwidth: kernel width " + std::to_string(kf) +
                             " does not match feature width " + std::to_string(f));
    }
    if (bias.size() != c) throw DimensionError("conv_time_fullwidth: bias length must equal channel count");

    const int pad = (kt - 1) / 2;
    const auto xv = x.data(), kv = kernels.data(), bv = bias.data();
    std::vector<double> out(static_cast<size_t>(T) * c);
    for (int t = 0; t < T; ++t) {
        for (int ch = 0; ch < c; ++ch) {
            double acc = bv[ch];
            for (int dt = 0; dt < kt; ++dt) {
                const int src = t + dt - pad;
                if (src < 0 || src >= T) continue;
                const double* __restrict krow = kv.data() + (static_cast<size_t>(ch) * kt + dt) * f;
                const double* __restrict xrow = xv.data() + static_cast<size_t>(src) * f;
                double dot = 0.0;
                for (int j = 0; j < f; ++j) dot += krow[j] * xrow[j];
                acc += dot;
            }
            out[static_cast<size_t>(t) * c + ch] = acc;
        }
    }
    const int xid = x.id(), kid = kernels.id(), bid = bias.id();
    return tape->record(
        "conv_time_fullwidth", {T, c}, {xid, kid, bid}, std::move(out),
        [xid, kid, bid, T, f, c, kt, pad](Tape& t, Tape::Node& node) {
            const auto xv2 = t.values_of(xid);
            const auto kv2 = t.values_of(kid);
            auto dx = t.grad_of(xid);
            auto dk = t.grad_of(kid);
            auto db = t.grad_of(bid);
            for (int ts = 0; ts < T; ++ts) {
                const double* gout = node.grad.data() + static_cast<size_t>(ts) * c;
                for (int ch = 0; ch < c; ++ch) {
                    const double g = gout[ch];
                    if (g == 0.0) continue;
                    db[ch] += g;
                    for (int dt = 0; dt < kt; ++dt) {
                        const int src = ts + dt - pad;
                        if (src < 0 || src >= T) continue;
                        const double* __restrict krow =
                            kv2.data() + (static_cast<size_t>(ch) * kt + dt) * f;
                        const double* __restrict xrow = xv2.data() + static_cast<size_t>(src) * f;
                        double* __restrict dkrow =
                            dk.data() + (static_cast<size_t>(ch) * kt + dt) * f;
                        double* __restrict dxrow = dx.data() + static_cast<size_t>(src) * f;
                        for (int j = 0; j < f; ++j) {
                            dkrow[j] += g * xrow[j];
                            dxrow[j] += g * krow[j];
                        }
                    }
                }
            }
        });
}

// ---- trig bases ------------------------------------------------------------------

namespace {

Tensor trig_basis(Tensor omega, std::span<const double> g, bool is_sin) {
    Tape* tape = same_tape({omega});
    const int K = static_cast<int>(omega.size());
    const int T = static_cast<int>(g.size());
    const auto ov = omega.data();
    std::vector<double> out(static_cast<size_t>(T) * K);
    std::vector<double> cache(g.begin(), g.end());
    for (int t = 0; t < T; ++t) {
        for (int k = 0; k < K; ++k) {
            const double phase = 2.0 * M_PI * ov[k] * g[t];
            out[static_cast<size_t>(t) * K + k] = is_sin ? std::sin(phase) : std::cos(phase);
        }
    }
    const int oid = omega.id();
    return tape->record(
        is_sin ? "sin_basis" : "cos_basis", {T, K}, {oid}, std::move(out),
        [oid, T, K, is_sin](Tape& t, Tape::Node& node) {
            const auto ov2 = t.values_of(oid);
            auto dom = t.grad_of(oid);
            for (int k = 0; k < K; ++k) {
                double acc = 0.0;
                for (int ts = 0; ts < T; ++ts) {
                    const double gt = node.cache[static_cast<size_t>(ts)];
                    const double phase = 2.0 * M_PI * ov2[k] * gt;
                    const double d = is_sin ? std::cos(phase) : -std::sin(phase);
                    acc += node.grad[static_cast<size_t>(ts) * K + k] * d * 2.0 * M_PI * gt;
                }
                dom[k] += acc;
            }
        },
        std::move(cache));
}

}  // namespace

Tensor sin_basis(Tensor omega, std::span<const double> g) { return trig_basis(omega, g, true); }
Tensor cos_basis(Tensor omega, std::span<const double> g) { return trig_basis(omega, g, false); }

// ---- select / stack ---------------------------------------------------------------

Tensor select_rows(std::span<const double> mask, Tensor on, Tensor off) {
    Tape* tape = same_tape({on, off});
    if (on.shape() != off.shape()) {
        throw DimensionError("select_rows: branch shapes disagree, " + shape_str(on.shape()) + " vs " +
                             shape_str(off.shape()));
    }
    const int m = on.rows(), n = on.cols();
    if (static_cast<int>(mask.size()) != m) {
        throw DimensionError("select_rows: mask length " + std::to_string(mask.size()) +
                             " does not match row count " + std::to_string(m));
    }
    const auto onv = on.data(), offv = off.data();
    std::vector<double> out(onv.size());
    std::vector<double> cache(mask.begin(), mask.end());
    for (int i = 0; i < m; ++i) {
        const auto& src = mask[static_cast<size_t>(i)] != 0.0 ? onv : offv;
        std::copy_n(src.data() + static_cast<size_t>(i) * n, n, out.data() + static_cast<size_t>(i) * n);
    }
    const int on_id = on.id(), off_id = off.id();
    return tape->record(
        "select_rows", on.shape(), {on_id, off_id}, std::move(out),
        [on_id, off_id, m, n](Tape& t, Tape::Node& node) {
            auto don = t.grad_of(on_id);
            auto doff = t.grad_of(off_id);
            for (int i = 0; i < m; ++i) {
                auto& dst = node.cache[static_cast<size_t>(i)] != 0.0 ? don : doff;
                const double* g = node.grad.data() + static_cast<size_t>(i) * n;
                double* d = dst.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) d[j] += g[j];
            }
        },
        std::move(cache));
}

Tensor cell_ffn(Tensor x, Tensor w1, Tensor b1, Tensor w2, Tensor b2) {
    Tape* tape = same_tape({x, w1, b1, w2, b2});
    const int n = x.rows(), in = x.cols();
    const int hid = w1.cols(), out_w = w2.cols();
    if (w1.rows() != in || w2.rows() != hid || b1.size() != hid || b2.size() != out_w) {
        throw DimensionError("cell_ffn: weight shapes do not chain, x " + shape_str(x.shape()) +
                             ", w1 " + shape_str(w1.shape()) + ", w2 " + shape_str(w2.shape()));
    }
    const auto xv = x.data(), w1v = w1.data(), b1v = b1.data(), w2v = w2.data(), b2v = b2.data();
    std::vector<double> out(static_cast<size_t>(n) * out_w);
    std::vector<double> cache(static_cast<size_t>(n) * hid);  // post-relu hidden rows
    {
        const double* __restrict xp = xv.data();
        const double* __restrict w1p = w1v.data();
        const double* __restrict w2p = w2v.data();
        double* __restrict hp = cache.data();
        double* __restrict op = out.data();
        for (int i = 0; i < n; ++i) {
            const double* xi = xp + static_cast<size_t>(i) * in;
            double* hi = hp + static_cast<size_t>(i) * hid;
            std::copy_n(b1v.data(), hid, hi);
            for (int l = 0; l < in; ++l) {
                const double v = xi[l];
                const double* row = w1p + static_cast<size_t>(l) * hid;
                for (int j = 0; j < hid; ++j) hi[j] += v * row[j];
            }
            for (int j = 0; j < hid; ++j) hi[j] = hi[j] > 0.0 ? hi[j] : 0.0;
            double* oi = op + static_cast<size_t>(i) * out_w;
            std::copy_n(b2v.data(), out_w, oi);
            for (int j = 0; j < hid; ++j) {
                const double v = hi[j];
                if (v == 0.0) continue;
                const double* row = w2p + static_cast<size_t>(j) * out_w;
                for (int q = 0; q < out_w; ++q) oi[q] += v * row[q];
            }
        }
    }
    const int xid = x.id(), w1id = w1.id(), b1id = b1.id(), w2id = w2.id(), b2id = b2.id();
    return tape->record(
        "cell_ffn", {n, out_w}, {xid, w1id, b1id, w2id, b2id}, std::move(out),
        [xid, w1id, b1id, w2id, b2id, n, in, hid, out_w](Tape& t, Tape::Node& node) {
            const auto xv2 = t.values_of(xid);
            const auto w1v2 = t.values_of(w1id);
            const auto w2v2 = t.values_of(w2id);
            auto dx = t.grad_of(xid);
            auto dw1 = t.grad_of(w1id);
            auto db1 = t.grad_of(b1id);
            auto dw2 = t.grad_of(w2id);
            auto db2 = t.grad_of(b2id);
            const double* __restrict xp = xv2.data();
            const double* __restrict w1p = w1v2.data();
            const double* __restrict w2p = w2v2.data();
            const double* __restrict hp = node.cache.data();
            const double* __restrict gp = node.grad.data();
            double* __restrict dxp = dx.data();
            double* __restrict dw1p = dw1.data();
            double* __restrict db1p = db1.data();
            double* __restrict dw2p = dw2.data();
            double* __restrict db2p = db2.data();
            std::vector<double> dhid(static_cast<size_t>(hid));
            for (int i = 0; i < n; ++i) {
                const double* gi = gp + static_cast<size_t>(i) * out_w;
                const double* hi = hp + static_cast<size_t>(i) * hid;
                const double* xi = xp + static_cast<size_t>(i) * in;
                for (int q = 0; q < out_w; ++q) db2p[q] += gi[q];
                for (int j = 0; j < hid; ++j) {
                    const double hj = hi[j];
                    if (hj == 0.0) {  // relu gate closed (or exactly at the kink)
                        dhid[static_cast<size_t>(j)] = 0.0;
                        continue;
                    }
                    const double* row = w2p + static_cast<size_t>(j) * out_w;
                    double* drow = dw2p + static_cast<size_t>(j) * out_w;
                    double acc = 0.0;
                    for (int q = 0; q < out_w; ++q) {
                        acc += row[q] * gi[q];
                        drow[q] += hj * gi[q];
                    }
                    dhid[static_cast<size_t>(j)] = acc;
                    db1p[j] += acc;
                }
                double* dxi = dxp + static_cast<size_t>(i) * in;
                for (int l = 0; l < in; ++l) {
                    const double v = xi[l];
                    const double* row = w1p + static_cast<size_t>(l) * hid;
                    double* drow = dw1p + static_cast<size_t>(l) * hid;
                    double acc = 0.0;
                    for (int j = 0; j < hid; ++j) {
                        acc += row[j] * dhid[static_cast<size_t>(j)];
                        drow[j] += v * dhid[static_cast<size_t>(j)];
                    }
                    dxi[l] += acc;
                }
            }
        },
        std::move(cache));
}

Tensor stack_scalars(std::span<const Tensor> xs) {
    if (xs.empty()) throw ContractError("stack_scalars: no inputs");
    Tape* tape = xs[0].tape();
    std::vector<int> ids;
    std::vector<double> out;
    for (const Tensor& x : xs) {
        if (x.tape() != tape) throw ContractError("stack_scalars: inputs live on different tapes");
        if (x.size() != 1) throw ContractError("stack_scalars: all inputs must be scalar");
        ids.push_back(x.id());
        out.push_back(x.data()[0]);
    }
    const int n = static_cast<int>(ids.size());
    return tape->record("stack_scalars", {1, n}, ids, std::move(out),
                        [ids](Tape& t, Tape::Node& node) {
                            for (size_t i = 0; i < ids.size(); ++i) t.grad_of(ids[i])[0] += node.grad[i];
                        });
}

// ---- losses -----------------------------------------------------------------------

Tensor pairwise_auc_margin(Tensor pos, Tensor neg) {
    Tape* tape = same_tape({pos, neg});
    const int P = static_cast<int>(pos.size());
    const int N = static_cast<int>(neg.size());
    if (P == 0 || N == 0) {
        throw ContractError("pairwise_auc_margin: both score sets must be non-empty (|P| = " +
                            std::to_string(P) + ", |N| = " + std::to_string(N) + ")");
    }
    const auto pv = pos.data(), nv = neg.data();
    double loss = 0.0;
    for (int i = 0; i < P; ++i) {
        for (int j = 0; j < N; ++j) loss += softplus(-(pv[i] - nv[j]));
    }
    const double inv = 1.0 / (static_cast<double>(P) * N);
    loss *= inv;
    const int pid = pos.id(), nid = neg.id();
    return tape->record("pairwise_auc_margin", {1, 1}, {pid, nid}, {loss},
                        [pid, nid, P, N, inv](Tape& t, Tape::Node& node) {
                            const auto pv2 = t.values_of(pid);
                            const auto nv2 = t.values_of(nid);
                            auto dp = t.grad_of(pid);
                            auto dn = t.grad_of(nid);
                            const double g = node.grad[0] * inv;
                            for (int i = 0; i < P; ++i) {
                                for (int j = 0; j < N; ++j) {
                                    // d/dd softplus(-d) = -sigmoid(-d), d = pos_i - neg_j
                                    const double s = stable_sigmoid(-(pv2[i] - nv2[j]));
                                    dp[i] -= g * s;
                                    dn[j] += g * s;
                                }
                            }
                        });
}

Tensor bce(Tensor scores, std::span<const double> labels) {
    Tape* tape = same_tape({scores});
    const int n = static_cast<int>(scores.size());
    if (static_cast<int>(labels.size()) != n) {
        throw DimensionError("bce: labels length " + std::to_string(labels.size()) +
                             " does not match score count " + std::to_string(n));
    }
    const auto sv = scores.data();
    std::vector<double> cache(labels.begin(), labels.end());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double p = std::clamp(sv[i], kBceClamp, 1.0 - kBceClamp);
        loss -= cache[static_cast<size_t>(i)] * std::log(p) +
                (1.0 - cache[static_cast<size_t>(i)]) * std::log(1.0 - p);
    }
    loss /= n;
    const int sid = scores.id();
    return tape->record(
        "bce", {1, 1}, {sid}, {loss},
        [sid, n](Tape& t, Tape::Node& node) {
            const auto sv2 = t.values_of(sid);
            auto ds = t.grad_of(sid);
            const double g = node.grad[0] / n;
            for (int i = 0; i < n; ++i) {
                if (sv2[i] <= kBceClamp || sv2[i] >= 1.0 - kBceClamp) continue;  // clamped: flat
                const double p = sv2[i];
                const double y = node.cache[static_cast<size_t>(i)];
                ds[i] += g * (-y / p + (1.0 - y) / (1.0 - p));
            }
        },
        std::move(cache));
}

Tensor bce_from_logits(Tensor logits, std::span<const double> labels) {
    Tape* tape = same_tape({logits});
    const int n = static_cast<int>(logits.size());
    if (static_cast<int>(labels.size()) != n) {
        throw DimensionError("bce_from_logits: labels length does not match logit count");
    }
    const auto lv = logits.data();
    std::vector<double> cache(labels.begin(), labels.end());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        loss += softplus(lv[i]) - cache[static_cast<size_t>(i)] * lv[i];
    }
    loss /= n;
    const int lid = logits.id();
    return tape->record(
        "bce_from_logits", {1, 1}, {lid}, {loss},
        [lid, n](Tape& t, Tape::Node& node) {
            const auto lv2 = t.values_of(lid);
            auto dl = t.grad_of(lid);
            const double g = node.grad[0] / n;
            for (int i = 0; i < n; ++i) {
                dl[i] += g * (stable_sigmoid(lv2[i]) - node.cache[static_cast<size_t>(i)]);
            }
        },
        std::move(cache));
}

}  // namespace gvhd::ad
