#include "gvhd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gvhd/errors.hpp"

namespace gvhd::eval {

namespace {

void require_same_length(const std::vector<int>& labels, const std::vector<double>& scores,
                         const char* op) {
    if (labels.size() != scores.size() || labels.empty()) {
        throw ContractError(std::string(op) + ": labels and scores must be non-empty and equal length");
    }
}

}  // namespace

double roc_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
    require_same_length(labels, scores, "roc_auc");
    long n_pos = 0;
    for (int y : labels) n_pos += y;
    const long n_neg = static_cast<long>(labels.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw UndefinedMetricError("roc_auc: needs both classes, got " + std::to_string(n_pos) +
                                   " positives / " + std::to_string(n_neg) + " negatives");
    }
    std::vector<size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    // Midranks: tied scores share the average of their 1-based rank range.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k) {
            if (labels[order[k]] == 1) rank_sum_pos += midrank;
        }
        i = j + 1;
    }
    const double numerator = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
    return numerator / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(const std::vector<int>& labels, const std::vector<double>& scores) {
    require_same_length(labels, scores, "auprc");
    long n_pos = 0;
    for (int y : labels) n_pos += y;
    if (n_pos == 0) throw UndefinedMetricError("auprc: needs at least one positive");

    std::vector<size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    double ap = 0.0;
    long tp = 0;
    for (size_t k = 0; k < order.size(); ++k) {
        if (labels[order[k]] == 1) {
            ++tp;
            const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
            ap += precision / static_cast<double>(n_pos);  // recall step is 1 / n_pos
        }
    }
    return ap;
}

Confusion confusion_at_threshold(const std::vector<int>& labels, const std::vector<double>& scores,
                                 double threshold) {
    require_same_length(labels, scores, "confusion_at_threshold");
    Confusion c;
    for (size_t i = 0; i < labels.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1) {
            predicted ? ++c.tp : ++c.fn;
        } else {
            predicted ? ++c.fp : ++c.tn;
        }
    }
    c.has_positives = (c.tp + c.fn) > 0;
    c.has_negatives = (c.tn + c.fp) > 0;
    c.recall = c.has_positives ? static_cast<double>(c.tp) / (c.tp + c.fn)
                               : std::numeric_limits<double>::quiet_NaN();
    c.specificity = c.has_negatives ? static_cast<double>(c.tn) / (c.tn + c.fp)
                                    : std::numeric_limits<double>::quiet_NaN();
    return c;
}

double select_threshold(const std::vector<int>& labels, const std::vector<double>& scores) {
    require_same_length(labels, scores, "select_threshold");
    long n_pos = 0;
    for (int y : labels) n_pos += y;
    if (n_pos == 0 || n_pos == static_cast<long>(labels.size())) {
        throw UndefinedMetricError("select_threshold: needs both classes");
    }
    std::vector<double> distinct(scores);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    std::vector<double> candidates;
    if (distinct.size() == 1) {
        candidates.push_back(distinct[0]);  // degenerate: everything ties
    } else {
        for (size_t i = 0; i + 1 < distinct.size(); ++i) {
            candidates.push_back((distinct[i] + distinct[i + 1]) / 2.0);
        }
    }

    double best_theta = candidates[0];
    double best_j = -std::numeric_limits<double>::infinity();
    double best_specificity = -1.0;
    for (double theta : candidates) {
        const Confusion c = confusion_at_threshold(labels, scores, theta);
        const double j = c.recall + c.specificity - 1.0;
        const bool better = j > best_j ||
                            (j == best_j && (c.specificity > best_specificity ||
                                             (c.specificity == best_specificity && theta > best_theta)));
        if (better) {
            best_j = j;
            best_theta = theta;
            best_specificity = c.specificity;
        }
    }
    return best_theta;
}

}  // namespace gvhd::eval
