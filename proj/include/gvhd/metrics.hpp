#pragma once

#include <vector>

namespace gvhd::eval {

// Probability that a random positive outranks a random negative, ties counted
// half; computed by midrank statistics, which equals brute-force pair counting
// exactly. Throws UndefinedMetricError unless both classes are present.
double roc_auc(const std::vector<int>& labels, const std::vector<double>& scores);

// Average precision over descending-score prefixes; ties resolved by stable
// sort on (score desc, index asc). Requires at least one positive.
double auprc(const std::vector<int>& labels, const std::vector<double>& scores);

struct Confusion {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    double recall = 0.0;       // NaN when no positives
    double specificity = 0.0;  // NaN when no negatives
    bool has_positives = false;
    bool has_negatives = false;
};

// Classify positive when score >= threshold.
Confusion confusion_at_threshold(const std::vector<int>& labels, const std::vector<double>& scores,
                                 double threshold);

// Youden's J maximizer over midpoints of adjacent distinct sorted scores
// (the score itself when all scores tie); ties broken toward higher
// specificity, then the larger threshold.
double select_threshold(const std::vector<int>& labels, const std::vector<double>& scores);

}  // namespace gvhd::eval
