#pragma once

#include <cstdint>
#include <vector>

namespace gvhd::baseline {

// Class-weighted L2-regularized logistic regression on aggregated features;
// the traditional comparison arm. Deterministic full-batch Adam.
struct LogisticModel {
    std::vector<double> weights;
    double bias = 0.0;
    std::vector<double> feature_mean;  // internal column standardization
    std::vector<double> feature_std;
};

struct LogisticOptions {
    double learning_rate = 0.05;
    double l2 = 1e-3;
    int iterations = 400;
};

LogisticModel fit_logistic(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& labels, const LogisticOptions& options = {});

double predict_logistic(const LogisticModel& model, const std::vector<double>& features);

}  // namespace gvhd::baseline
