#include "gvhd/baseline.hpp"

#include <algorithm>
#include <cmath>

#include "gvhd/errors.hpp"

namespace gvhd::baseline {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

LogisticModel fit_logistic(const std::vector<std::vector<double>>& features,
                           const std::vector<int>& labels, const LogisticOptions& options) {
    const size_t n = features.size();
    if (n == 0 || labels.size() != n) throw ContractError("fit_logistic: empty or mismatched inputs");
    const size_t p = features[0].size();

    LogisticModel model;
    model.feature_mean.assign(p, 0.0);
    model.feature_std.assign(p, 1.0);
    for (const auto& row : features) {
        for (size_t j = 0; j < p; ++j) model.feature_mean[j] += row[j];
    }
    for (size_t j = 0; j < p; ++j) model.feature_mean[j] /= static_cast<double>(n);
    std::vector<double> var(p, 0.0);
    for (const auto& row : features) {
        for (size_t j = 0; j < p; ++j) {
            const double d = row[j] - model.feature_mean[j];
            var[j] += d * d;
        }
    }
    for (size_t j = 0; j < p; ++j) {
        model.feature_std[j] = std::max(std::sqrt(var[j] / static_cast<double>(n)), 1e-8);
    }

    std::vector<std::vector<double>> x(n, std::vector<double>(p));
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < p; ++j) {
            x[i][j] = (features[i][j] - model.feature_mean[j]) / model.feature_std[j];
        }
    }

    int64_t n_pos = 0;
    for (int y : labels) n_pos += y;
    if (n_pos == 0 || n_pos == static_cast<int64_t>(n)) {
        throw ContractError("fit_logistic: both classes required");
    }
    // Balanced class weights keep the rare positives visible at 2% prevalence.
    const double w_pos = static_cast<double>(n) / (2.0 * static_cast<double>(n_pos));
    const double w_neg = static_cast<double>(n) / (2.0 * static_cast<double>(n - n_pos));

    model.weights.assign(p, 0.0);
    model.bias = 0.0;
    std::vector<double> m(p + 1, 0.0), v(p + 1, 0.0), grad(p + 1, 0.0);
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

    for (int it = 1; it <= options.iterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (size_t i = 0; i < n; ++i) {
            double z = model.bias;
            for (size_t j = 0; j < p; ++j) z += model.weights[j] * x[i][j];
            const double err = sigmoid(z) - labels[i];
            const double w = labels[i] == 1 ? w_pos : w_neg;
            const double g = w * err / static_cast<double>(n);
            for (size_t j = 0; j < p; ++j) grad[j] += g * x[i][j];
            grad[p] += g;
        }
        for (size_t j = 0; j < p; ++j) grad[j] += options.l2 * model.weights[j];

        const double bc1 = 1.0 - std::pow(kBeta1, it);
        const double bc2 = 1.0 - std::pow(kBeta2, it);
        for (size_t j = 0; j <= p; ++j) {
            m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * grad[j];
            v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * grad[j] * grad[j];
            const double step = options.learning_rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + kEps);
            if (j < p) {
                model.weights[j] -= step;
            } else {
                model.bias -= step;
            }
        }
    }
    return model;
}

double predict_logistic(const LogisticModel& model, const std::vector<double>& features) {
    if (features.size() != model.weights.size()) {
        throw ContractError("predict_logistic: feature length does not match model");
    }
    double z = model.bias;
    for (size_t j = 0; j < features.size(); ++j) {
        z += model.weights[j] * (features[j] - model.feature_mean[j]) / model.feature_std[j];
    }
    return sigmoid(z);
}

}  // namespace gvhd::baseline
