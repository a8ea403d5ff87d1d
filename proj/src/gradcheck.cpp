#include "gvhd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace gvhd::ad {

GradcheckReport central_difference_check(const std::function<double()>& eval,
                                         std::span<const GradcheckCoords> coords, double eps) {
    if (eps <= 0.0) throw ContractError("central_difference_check: eps must be positive");
    GradcheckReport report;
    for (const auto& block : coords) {
        for (size_t i = 0; i < block.values.size(); ++i) {
            const double saved = block.values[i];
            block.values[i] = saved + eps;
            const double up = eval();
            block.values[i] = saved - eps;
            const double down = eval();
            block.values[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = block.analytic[i];
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            const double rel = std::fabs(analytic - numeric) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = block.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return report;
}

double finite_difference_gradcheck(
    const std::function<Tensor(Tape&, std::span<const Tensor>)>& fn,
    std::vector<std::vector<double>> inputs, std::vector<Shape> shapes, double eps) {
    if (inputs.size() != shapes.size()) {
        throw ContractError("finite_difference_gradcheck: inputs/shapes size mismatch");
    }
    auto forward = [&]() {
        Tape tape;
        std::vector<Tensor> leaves;
        leaves.reserve(inputs.size());
        for (size_t i = 0; i < inputs.size(); ++i) {
            leaves.push_back(tape.leaf(shapes[i], inputs[i]));
        }
        return fn(tape, leaves).value();
    };

    // Analytic pass.
    std::vector<std::vector<double>> analytic(inputs.size());
    {
        Tape tape;
        std::vector<Tensor> leaves;
        for (size_t i = 0; i < inputs.size(); ++i) leaves.push_back(tape.leaf(shapes[i], inputs[i]));
        Tensor out = fn(tape, leaves);
        tape.backward(out);
        for (size_t i = 0; i < inputs.size(); ++i) {
            auto g = leaves[i].grad();
            analytic[i].assign(g.begin(), g.end());
        }
    }

    std::vector<GradcheckCoords> coords;
    for (size_t i = 0; i < inputs.size(); ++i) {
        coords.push_back({"input" + std::to_string(i),
                          std::span<double>(inputs[i].data(), inputs[i].size()),
                          std::span<const double>(analytic[i].data(), analytic[i].size())});
    }
    return central_difference_check(forward, coords, eps).max_rel_err;
}

}  // namespace gvhd::ad
