#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gvhd/tensor.hpp"

namespace gvhd::ad {

// One perturbable coordinate block with its already-computed analytic gradient.
struct GradcheckCoords {
    std::string name;
    std::span<double> values;
    std::span<const double> analytic;
};

struct GradcheckReport {
    double max_rel_err = 0.0;
    std::string worst;  // "name[i]"
};

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) against the
// analytic gradients; relative error uses max(|analytic|, |numeric|, 1e-8).
GradcheckReport central_difference_check(const std::function<double()>& eval,
                                         std::span<const GradcheckCoords> coords, double eps);

// Convenience wrapper for a pure tensor function: builds leaves from `inputs`,
// evaluates fn to a scalar, backpropagates, then runs the central-difference
// check over every input coordinate. Returns the max relative error.
double finite_difference_gradcheck(
    const std::function<Tensor(Tape&, std::span<const Tensor>)>& fn,
    std::vector<std::vector<double>> inputs, std::vector<Shape> shapes, double eps);

}  // namespace gvhd::ad
