#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gvhd/patient.hpp"

namespace gvhd::data {

struct CohortShapes {
    int demo_features = 4;
    int lab_features = 74;
    int lab_steps = 24;
    int dx_features = 20;
    int dx_steps = 12;
    int drug_features = 280;
    int drug_steps = 24;
};

struct GeneratorConfig {
    int n_patients = 2100;
    double prevalence = 0.02;
    double missing_ratio = 0.729;
    double effect_size = 2.0;
    uint64_t seed = 20250801;
    CohortShapes shapes;
};

// Where the generator plants signal; recorded in the manifest so tests can
// target it. Indices are evenly spread over each feature range.
struct SignalPlacement {
    std::vector<int> drug_features;  // elevated/oscillating counts (8)
    std::vector<int> lab_features;   // drift slopes + denser observation (6)
    std::vector<int> dx_features;    // late-window flags (3)
};
SignalPlacement signal_placement(const CohortShapes& shapes);

struct CohortManifest {
    std::string schema = "gvhd-cohort/1";
    int patients = 0;
    int positives = 0;
    uint64_t seed = 0;
    std::string config_hash;
    CohortShapes shapes;
    SignalPlacement signal;
    double realized_prevalence = 0.0;
    double realized_lab_missing = 0.0;
    GeneratorConfig generator;
};

struct Cohort {
    CohortManifest manifest;
    std::vector<PatientRecord> patients;

    std::vector<int> labels() const {
        std::vector<int> ys;
        ys.reserve(patients.size());
        for (const auto& p : patients) ys.push_back(p.label);
        return ys;
    }
};

// Synthetic cohort with planted signal. Deterministic given the config; each
// patient draws from an independent (seed, index) stream, so parallel and
// serial generation agree byte for byte.
Cohort generate_cohort(const GeneratorConfig& config);

// On-disk format: <dir>/cohort.manifest.json + <dir>/cohort.jsonl (one patient
// object per line). Round trips are byte-identical.
void save_cohort(const Cohort& cohort, const std::string& dir);
Cohort load_cohort(const std::string& dir);

std::string generator_config_json(const GeneratorConfig& config);  // canonical form
GeneratorConfig generator_config_from_json(const std::string& text);
std::string fnv1a_hex(const std::string& text);

// ---- standard scaling --------------------------------------------------------

// Per-feature standardization statistics, fit on training patients only. Lab
// statistics use observed cells only; diagnosis flags are binary and left
// untouched; masked lab cells keep their sentinel 0.
struct Scaler {
    std::vector<double> lab_mean, lab_std;
    std::vector<double> drug_mean, drug_std;
    std::vector<double> demo_mean, demo_std;
};

Scaler fit_scaler(const std::vector<PatientRecord>& patients, const std::vector<int>& train_indices);
PatientRecord apply_scaler(const PatientRecord& patient, const Scaler& scaler);
PatientRecord invert_scaler(const PatientRecord& patient, const Scaler& scaler);

// ---- folds ---------------------------------------------------------------------

// Disjoint folds covering all indices; per-fold positive counts differ by at
// most one. Seeded shuffle before round-robin assignment.
std::vector<std::vector<int>> stratified_kfold(const std::vector<int>& labels, int k, uint64_t seed);

// Split `indices` into (rest, held_out) preserving label balance; the held-out
// part receives ceil(fraction * count) per class, at least one positive when
// any positive exists.
struct SplitResult {
    std::vector<int> rest;
    std::vector<int> held_out;
};
SplitResult stratified_split(const std::vector<int>& indices, const std::vector<int>& labels,
                             double fraction, uint64_t seed);

// ---- traditional-baseline features ------------------------------------------------

// Expects a scaled patient. Layout: demographics, any-diagnosis indicator,
// per-lab mean/min/max over time (missing cells at the scaled mean 0), per-drug
// summed counts. Length 4 + 1 + 3 * F_lab + F_drug.
std::vector<double> aggregate_baseline_features(const PatientRecord& patient);

}  // namespace gvhd::data
