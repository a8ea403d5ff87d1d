#pragma once

#include <string>
#include <vector>

#include "gvhd/errors.hpp"

namespace gvhd::data {

// One temporal modality: dense [steps x features] values plus a global time
// index in [0, 1] per step. Labs additionally carry a binary observation mask;
// masked-out cells hold a sentinel 0 and are never read by the model.
struct ModalityBlock {
    int steps = 0;
    int features = 0;
    std::vector<double> values;      // row-major steps x features
    std::vector<double> time_index;  // length steps, non-decreasing, in [0, 1]
    std::vector<double> mask;        // empty, or steps x features of {0, 1}

    bool has_mask() const { return !mask.empty(); }
    double at(int t, int f) const { return values[static_cast<size_t>(t) * features + f]; }

    void validate(const std::string& where) const {
        if (static_cast<int>(values.size()) != steps * features) {
            throw IntegrityError(where + ": values length " + std::to_string(values.size()) +
                                 " does not match " + std::to_string(steps) + " x " +
                                 std::to_string(features));
        }
        if (static_cast<int>(time_index.size()) != steps) {
            throw IntegrityError(where + ": time index length does not match step count");
        }
        double prev = 0.0;
        for (double g : time_index) {
            if (g < 0.0 || g > 1.0) throw IntegrityError(where + ": time index outside [0, 1]");
            if (g < prev) throw IntegrityError(where + ": time index not non-decreasing");
            prev = g;
        }
        if (!mask.empty() && mask.size() != values.size()) {
            throw IntegrityError(where + ": mask shape does not match values");
        }
    }
};

struct PatientRecord {
    std::string id;
    std::vector<double> demo;  // encoded gender, race, ethnicity, scaled age
    ModalityBlock dx;
    ModalityBlock lab;   // mask required
    ModalityBlock drug;
    int label = 0;       // 1 = GVHD
};

}  // namespace gvhd::data
