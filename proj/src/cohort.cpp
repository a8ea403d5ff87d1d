#include "gvhd/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "gvhd/rng.hpp"
#include "json.hpp"

namespace gvhd::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr uint64_t kLabelStream = 0x4c41424cULL;  // label assignment
constexpr uint64_t kDataStream = 0x44415441ULL;   // per-patient data

double round_to(double v, double scale) { return std::round(v * scale) / scale; }
double round6(double v) { return round_to(v, 1e6); }
double round9(double v) { return round_to(v, 1e9); }

std::vector<int> spread_indices(int range, int count) {
    count = std::min(count, range);
    std::vector<int> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        out.push_back(static_cast<int>(static_cast<int64_t>(range) * (2 * i + 1) / (2 * count)));
    }
    return out;
}

bool contains(const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
}

// Sorted time stamps in [0, 1]; positives get mildly late-skewed spacing.
std::vector<double> draw_time_index(Rng& rng, int steps, int label, double effect) {
    std::vector<double> g(static_cast<size_t>(steps));
    const double skew = 1.0 / (1.0 + effect * 0.15 * label);
    for (double& v : g) v = std::pow(rng.uniform(), skew);
    std::sort(g.begin(), g.end());
    for (double& v : g) v = round9(v);
    return g;
}

}  // namespace

SignalPlacement signal_placement(const CohortShapes& shapes) {
    SignalPlacement s;
    s.drug_features = spread_indices(shapes.drug_features, 8);
    s.lab_features = spread_indices(shapes.lab_features, 6);
    s.dx_features = spread_indices(shapes.dx_features, 3);
    return s;
}

Cohort generate_cohort(const GeneratorConfig& config) {
    const auto& sh = config.shapes;
    const int n = config.n_patients;
    const int n_pos = static_cast<int>(std::lround(config.prevalence * n));
    if (n_pos < 2) {
        throw ConfigError("generate_cohort: prevalence * n_patients = " + std::to_string(n_pos) +
                          " < 2; folds need positives");
    }
    if (config.missing_ratio < 0.0 || config.missing_ratio > 1.0) {
        throw ConfigError("generate_cohort: missing_ratio outside [0, 1]");
    }
    const SignalPlacement signal = signal_placement(sh);
    const double effect = config.effect_size;

    // Latent risk ranking decides labels; data streams stay label-agnostic at
    // effect 0, so zero effect means zero signal by construction.
    std::vector<std::pair<double, int>> risk(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(Rng::mix(config.seed, kLabelStream), static_cast<uint64_t>(i));
        risk[static_cast<size_t>(i)] = {rng.logistic() + rng.normal(0.0, 0.5), i};
    }
    std::vector<int> labels(static_cast<size_t>(n), 0);
    std::sort(risk.begin(), risk.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; i < n_pos; ++i) labels[static_cast<size_t>(risk[static_cast<size_t>(i)].second)] = 1;

    Cohort cohort;
    cohort.patients.resize(static_cast<size_t>(n));
    int64_t lab_cells = 0, lab_missing = 0;

    for (int i = 0; i < n; ++i) {
        Rng rng(Rng::mix(config.seed, kDataStream), static_cast<uint64_t>(i));
        PatientRecord& p = cohort.patients[static_cast<size_t>(i)];
        const int label = labels[static_cast<size_t>(i)];
        {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "p%06d", i);
            p.id = buf;
        }
        p.label = label;

        // Demographics: gender, race, ethnicity (category index scaled to [0, 1]),
        // age min-max scaled over the cohort range 22..76. No planted signal.
        p.demo.resize(static_cast<size_t>(sh.demo_features), 0.0);
        {
            const double gender = rng.uniform() < 0.651 ? 1.0 : 0.0;
            const double ur = rng.uniform();
            int race = 4;
            if (ur < 0.872) race = 0;
            else if (ur < 0.916) race = 1;
            else if (ur < 0.952) race = 2;
            else if (ur < 0.987) race = 3;
            const double ue = rng.uniform();
            int eth = 2;
            if (ue < 0.840) eth = 0;
            else if (ue < 0.981) eth = 1;
            const double age = std::clamp(rng.normal(57.0, 10.0), 22.0, 76.0);
            if (sh.demo_features >= 1) p.demo[0] = gender;
            if (sh.demo_features >= 2) p.demo[1] = race / 4.0;
            if (sh.demo_features >= 3) p.demo[2] = eth / 2.0;
            if (sh.demo_features >= 4) p.demo[3] = round6((age - 22.0) / 54.0);
        }

        // Diagnosis: binary flags; positives get a late-window rate boost on
        // the designated features (invisible to the any-diagnosis aggregate).
        p.dx.steps = sh.dx_steps;
        p.dx.features = sh.dx_features;
        p.dx.time_index = draw_time_index(rng, sh.dx_steps, label, effect);
        p.dx.values.assign(static_cast<size_t>(sh.dx_steps) * sh.dx_features, 0.0);
        for (int t = 0; t < sh.dx_steps; ++t) {
            for (int f = 0; f < sh.dx_features; ++f) {
                double rate = 0.02 + 0.08 * ((f % 10) / 10.0);
                if (label == 1 && contains(signal.dx_features, f) &&
                    p.dx.time_index[static_cast<size_t>(t)] >= 0.5) {
                    rate += effect * 0.11;
                }
                p.dx.values[static_cast<size_t>(t) * sh.dx_features + f] =
                    rng.uniform() < std::min(rate, 0.95) ? 1.0 : 0.0;
            }
        }

        // Drug counts: sparse Poisson background; positives get a g-locked
        // oscillation plus a small mean shift on the designated drugs.
        p.drug.steps = sh.drug_steps;
        p.drug.features = sh.drug_features;
        p.drug.time_index = draw_time_index(rng, sh.drug_steps, label, effect);
        p.drug.values.assign(static_cast<size_t>(sh.drug_steps) * sh.drug_features, 0.0);
        for (int t = 0; t < sh.drug_steps; ++t) {
            const double g = p.drug.time_index[static_cast<size_t>(t)];
            for (int f = 0; f < sh.drug_features; ++f) {
                double lambda = (f % 37 == 0) ? 0.8 : 0.02 + 0.10 * ((f % 16) / 16.0);
                if (contains(signal.drug_features, f)) {
                    const double wave = 1.0 + label * effect * 0.8 * std::sin(4.0 * M_PI * g);
                    lambda = lambda * std::max(0.0, wave) + label * effect * 0.02;
                }
                p.drug.values[static_cast<size_t>(t) * sh.drug_features + f] = rng.poisson(lambda);
            }
        }

        // Labs: per-feature patient level plus cell noise; positives get a
        // drift slope, a small level shift, and denser observation on the
        // designated labs. Masked cells carry the sentinel 0.
        p.lab.steps = sh.lab_steps;
        p.lab.features = sh.lab_features;
        p.lab.time_index = draw_time_index(rng, sh.lab_steps, label, effect);
        p.lab.values.assign(static_cast<size_t>(sh.lab_steps) * sh.lab_features, 0.0);
        p.lab.mask.assign(p.lab.values.size(), 0.0);
        std::vector<double> level(static_cast<size_t>(sh.lab_features));
        for (double& v : level) v = rng.normal(0.0, 0.6);
        std::vector<double> slope(signal.lab_features.size());
        for (double& v : slope) v = std::fabs(rng.normal(1.0, 0.25));
        for (int t = 0; t < sh.lab_steps; ++t) {
            const double g = p.lab.time_index[static_cast<size_t>(t)];
            for (int f = 0; f < sh.lab_features; ++f) {
                double value = level[static_cast<size_t>(f)] + rng.normal(0.0, 0.8);
                double observe_p = 1.0 - config.missing_ratio;
                const auto sig = std::find(signal.lab_features.begin(), signal.lab_features.end(), f);
                if (sig != signal.lab_features.end()) {
                    const auto si = static_cast<size_t>(sig - signal.lab_features.begin());
                    value += label * effect *
                             (0.5 * slope[si] * (2.0 * g - 1.0) + 0.08);
                    observe_p = std::clamp(observe_p + label * effect * 0.09, 0.02, 0.98);
                }
                const bool observed = rng.uniform() < observe_p;
                const size_t cell = static_cast<size_t>(t) * sh.lab_features + f;
                ++lab_cells;
                if (observed) {
                    p.lab.values[cell] = round6(value);
                    p.lab.mask[cell] = 1.0;
                } else {
                    ++lab_missing;
                }
            }
        }
    }

    CohortManifest& m = cohort.manifest;
    m.patients = n;
    m.positives = n_pos;
    m.seed = config.seed;
    m.shapes = sh;
    m.signal = signal;
    m.generator = config;
    m.config_hash = fnv1a_hex(generator_config_json(config));
    m.realized_prevalence = static_cast<double>(n_pos) / n;
    m.realized_lab_missing = lab_cells > 0 ? static_cast<double>(lab_missing) / lab_cells : 0.0;
    return cohort;
}

// ---- JSON serialization --------------------------------------------------------

std::string fnv1a_hex(const std::string& text) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

json shapes_to_json(const CohortShapes& sh) {
    return json{{"demo", {{"features", sh.demo_features}}},
                {"lab", {{"features", sh.lab_features}, {"steps", sh.lab_steps}, {"interval", "1-hour"}}},
                {"dx", {{"features", sh.dx_features}, {"steps", sh.dx_steps}, {"interval", "3-month"}}},
                {"drug", {{"features", sh.drug_features}, {"steps", sh.drug_steps}, {"interval", "1-day"}}}};
}

CohortShapes shapes_from_json(const json& j) {
    CohortShapes sh;
    sh.demo_features = j.at("demo").at("features").get<int>();
    sh.lab_features = j.at("lab").at("features").get<int>();
    sh.lab_steps = j.at("lab").at("steps").get<int>();
    sh.dx_features = j.at("dx").at("features").get<int>();
    sh.dx_steps = j.at("dx").at("steps").get<int>();
    sh.drug_features = j.at("drug").at("features").get<int>();
    sh.drug_steps = j.at("drug").at("steps").get<int>();
    return sh;
}

}  // namespace

std::string generator_config_json(const GeneratorConfig& c) {
    json j{{"n_patients", c.n_patients},
           {"prevalence", c.prevalence},
           {"missing_ratio", c.missing_ratio},
           {"effect_size", c.effect_size},
           {"seed", c.seed},
           {"shapes", shapes_to_json(c.shapes)}};
    return j.dump();
}

GeneratorConfig generator_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    GeneratorConfig c;
    c.n_patients = j.at("n_patients").get<int>();
    c.prevalence = j.at("prevalence").get<double>();
    c.missing_ratio = j.at("missing_ratio").get<double>();
    c.effect_size = j.at("effect_size").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("shapes")) c.shapes = shapes_from_json(j.at("shapes"));
    return c;
}

void save_cohort(const Cohort& cohort, const std::string& dir) {
    fs::create_directories(dir);
    const auto& m = cohort.manifest;
    json mj{{"schema", m.schema},
            {"patients", m.patients},
            {"positives", m.positives},
            {"seed", m.seed},
            {"config_hash", m.config_hash},
            {"shapes", shapes_to_json(m.shapes)},
            {"signal",
             {{"drug_features", m.signal.drug_features},
              {"lab_features", m.signal.lab_features},
              {"dx_features", m.signal.dx_features}}},
            {"realized",
             {{"prevalence", m.realized_prevalence}, {"lab_missing_ratio", m.realized_lab_missing}}},
            {"generator", json::parse(generator_config_json(m.generator))}};
    {
        std::ofstream out(fs::path(dir) / "cohort.manifest.json");
        out << mj.dump(2) << "\n";
    }
    std::ofstream out(fs::path(dir) / "cohort.jsonl");
    for (const auto& p : cohort.patients) {
        json pj{{"id", p.id},
                {"label", p.label},
                {"demo", p.demo},
                {"dx", {{"values", p.dx.values}, {"g", p.dx.time_index}}},
                {"lab", {{"values", p.lab.values}, {"mask", p.lab.mask}, {"g", p.lab.time_index}}},
                {"drug", {{"values", p.drug.values}, {"g", p.drug.time_index}}}};
        out << pj.dump() << "\n";
    }
}

Cohort load_cohort(const std::string& dir) {
    const fs::path manifest_path = fs::path(dir) / "cohort.manifest.json";
    const fs::path data_path = fs::path(dir) / "cohort.jsonl";
    if (!fs::exists(manifest_path) || !fs::exists(data_path)) {
        throw IntegrityError("load_cohort: missing cohort files under " + dir);
    }
    Cohort cohort;
    json mj;
    {
        std::ifstream in(manifest_path);
        in >> mj;
    }
    CohortManifest& m = cohort.manifest;
    m.schema = mj.at("schema").get<std::string>();
    m.patients = mj.at("patients").get<int>();
    m.positives = mj.at("positives").get<int>();
    m.seed = mj.at("seed").get<uint64_t>();
    m.config_hash = mj.at("config_hash").get<std::string>();
    m.shapes = shapes_from_json(mj.at("shapes"));
    m.signal.drug_features = mj.at("signal").at("drug_features").get<std::vector<int>>();
    m.signal.lab_features = mj.at("signal").at("lab_features").get<std::vector<int>>();
    m.signal.dx_features = mj.at("signal").at("dx_features").get<std::vector<int>>();
    m.realized_prevalence = mj.at("realized").at("prevalence").get<double>();
    m.realized_lab_missing = mj.at("realized").at("lab_missing_ratio").get<double>();
    m.generator = generator_config_from_json(mj.at("generator").dump());

    const auto& sh = m.shapes;
    std::ifstream in(data_path);
    std::string line;
    int count_pos = 0;
    auto read_block = [&](const json& bj, int steps, int features, bool with_mask,
                          const std::string& id, const char* name) {
        ModalityBlock block;
        block.steps = steps;
        block.features = features;
        block.values = bj.at("values").get<std::vector<double>>();
        block.time_index = bj.at("g").get<std::vector<double>>();
        if (with_mask) block.mask = bj.at("mask").get<std::vector<double>>();
        if (static_cast<int>(block.values.size()) != steps * features) {
            throw IntegrityError("load_cohort: patient " + id + " " + name + " has " +
                                 std::to_string(block.values.size()) + " values, manifest expects " +
                                 std::to_string(steps) + " x " + std::to_string(features));
        }
        block.validate("load_cohort: patient " + id + " " + name);
        return block;
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json pj = json::parse(line);
        PatientRecord p;
        p.id = pj.at("id").get<std::string>();
        p.label = pj.at("label").get<int>();
        if (p.label != 0 && p.label != 1) {
            throw IntegrityError("load_cohort: patient " + p.id + " has label outside {0, 1}");
        }
        p.demo = pj.at("demo").get<std::vector<double>>();
        if (static_cast<int>(p.demo.size()) != sh.demo_features) {
            throw IntegrityError("load_cohort: patient " + p.id + " demographics length " +
                                 std::to_string(p.demo.size()) + ", manifest expects " +
                                 std::to_string(sh.demo_features));
        }
        p.dx = read_block(pj.at("dx"), sh.dx_steps, sh.dx_features, false, p.id, "diagnosis");
        p.lab = read_block(pj.at("lab"), sh.lab_steps, sh.lab_features, true, p.id, "lab");
        p.drug = read_block(pj.at("drug"), sh.drug_steps, sh.drug_features, false, p.id, "drug");
        count_pos += p.label;
        cohort.patients.push_back(std::move(p));
    }
    if (static_cast<int>(cohort.patients.size()) != m.patients) {
        throw IntegrityError("load_cohort: manifest declares " + std::to_string(m.patients) +
                             " patients, data file has " + std::to_string(cohort.patients.size()));
    }
    if (count_pos != m.positives) {
        throw IntegrityError("load_cohort: manifest declares " + std::to_string(m.positives) +
                             " positives, data file has " + std::to_string(count_pos));
    }
    return cohort;
}

// ---- scaler ---------------------------------------------------------------------

namespace {

constexpr double kStdFloor = 1e-8;

void finalize_stats(std::vector<double>& mean, std::vector<double>& std_dev,
                    const std::vector<double>& sum, const std::vector<double>& sum_sq,
                    const std::vector<int64_t>& count) {
    for (size_t f = 0; f < mean.size(); ++f) {
        if (count[f] > 0) {
            mean[f] = sum[f] / count[f];
            const double var = std::max(0.0, sum_sq[f] / count[f] - mean[f] * mean[f]);
            std_dev[f] = std::max(std::sqrt(var), kStdFloor);
        } else {
            mean[f] = 0.0;
            std_dev[f] = 1.0;
        }
    }
}

}  // namespace

Scaler fit_scaler(const std::vector<PatientRecord>& patients, const std::vector<int>& train_indices) {
    if (train_indices.empty()) throw ContractError("fit_scaler: empty training set");
    const auto& first = patients.at(static_cast<size_t>(train_indices[0]));
    const int f_lab = first.lab.features, f_drug = first.drug.features;
    const int f_demo = static_cast<int>(first.demo.size());

    std::vector<double> lab_sum(f_lab, 0.0), lab_sq(f_lab, 0.0);
    std::vector<int64_t> lab_n(f_lab, 0);
    std::vector<double> drug_sum(f_drug, 0.0), drug_sq(f_drug, 0.0);
    std::vector<int64_t> drug_n(f_drug, 0);
    std::vector<double> demo_sum(f_demo, 0.0), demo_sq(f_demo, 0.0);
    std::vector<int64_t> demo_n(f_demo, 0);

    for (int idx : train_indices) {
        const PatientRecord& p = patients.at(static_cast<size_t>(idx));
        for (int t = 0; t < p.lab.steps; ++t) {
            for (int f = 0; f < f_lab; ++f) {
                const size_t cell = static_cast<size_t>(t) * f_lab + f;
                if (p.lab.mask.empty() || p.lab.mask[cell] != 0.0) {
                    const double v = p.lab.values[cell];
                    lab_sum[f] += v;
                    lab_sq[f] += v * v;
                    ++lab_n[f];
                }
            }
        }
        for (int t = 0; t < p.drug.steps; ++t) {
            for (int f = 0; f < f_drug; ++f) {
                const double v = p.drug.values[static_cast<size_t>(t) * f_drug + f];
                drug_sum[f] += v;
                drug_sq[f] += v * v;
                ++drug_n[f];
            }
        }
        for (int f = 0; f < f_demo; ++f) {
            demo_sum[f] += p.demo[static_cast<size_t>(f)];
            demo_sq[f] += p.demo[static_cast<size_t>(f)] * p.demo[static_cast<size_t>(f)];
            ++demo_n[f];
        }
    }

    Scaler s;
    s.lab_mean.resize(f_lab);
    s.lab_std.resize(f_lab);
    s.drug_mean.resize(f_drug);
    s.drug_std.resize(f_drug);
    s.demo_mean.resize(f_demo);
    s.demo_std.resize(f_demo);
    finalize_stats(s.lab_mean, s.lab_std, lab_sum, lab_sq, lab_n);
    finalize_stats(s.drug_mean, s.drug_std, drug_sum, drug_sq, drug_n);
    finalize_stats(s.demo_mean, s.demo_std, demo_sum, demo_sq, demo_n);
    return s;
}

PatientRecord apply_scaler(const PatientRecord& patient, const Scaler& scaler) {
    PatientRecord p = patient;
    const int f_lab = p.lab.features;
    for (int t = 0; t < p.lab.steps; ++t) {
        for (int f = 0; f < f_lab; ++f) {
            const size_t cell = static_cast<size_t>(t) * f_lab + f;
            if (!p.lab.mask.empty() && p.lab.mask[cell] == 0.0) continue;  // sentinel stays 0
            p.lab.values[cell] = (p.lab.values[cell] - scaler.lab_mean[f]) / scaler.lab_std[f];
        }
    }
    const int f_drug = p.drug.features;
    for (int t = 0; t < p.drug.steps; ++t) {
        for (int f = 0; f < f_drug; ++f) {
            const size_t cell = static_cast<size_t>(t) * f_drug + f;
            p.drug.values[cell] = (p.drug.values[cell] - scaler.drug_mean[f]) / scaler.drug_std[f];
        }
    }
    for (size_t f = 0; f < p.demo.size(); ++f) {
        p.demo[f] = (p.demo[f] - scaler.demo_mean[f]) / scaler.demo_std[f];
    }
    return p;
}

PatientRecord invert_scaler(const PatientRecord& patient, const Scaler& scaler) {
    PatientRecord p = patient;
    const int f_lab = p.lab.features;
    for (int t = 0; t < p.lab.steps; ++t) {
        for (int f = 0; f < f_lab; ++f) {
            const size_t cell = static_cast<size_t>(t) * f_lab + f;
            if (!p.lab.mask.empty() && p.lab.mask[cell] == 0.0) continue;
            p.lab.values[cell] = p.lab.values[cell] * scaler.lab_std[f] + scaler.lab_mean[f];
        }
    }
    const int f_drug = p.drug.features;
    for (int t = 0; t < p.drug.steps; ++t) {
        for (int f = 0; f < f_drug; ++f) {
            const size_t cell = static_cast<size_t>(t) * f_drug + f;
            p.drug.values[cell] = p.drug.values[cell] * scaler.drug_std[f] + scaler.drug_mean[f];
        }
    }
    for (size_t f = 0; f < p.demo.size(); ++f) {
        p.demo[f] = p.demo[f] * scaler.demo_std[f] + scaler.demo_mean[f];
    }
    return p;
}

// ---- folds ------------------------------------------------------------------------

std::vector<std::vector<int>> stratified_kfold(const std::vector<int>& labels, int k, uint64_t seed) {
    if (k < 2) throw ConfigError("stratified_kfold: k must be >= 2");
    std::vector<int> pos, neg;
    for (size_t i = 0; i < labels.size(); ++i) {
        (labels[i] == 1 ? pos : neg).push_back(static_cast<int>(i));
    }
    if (static_cast<int>(pos.size()) < k) {
        throw ConfigError("stratified_kfold: " + std::to_string(pos.size()) +
                          " positives cannot cover " + std::to_string(k) + " folds");
    }
    Rng rng(seed, 0x4b464f4cULL);
    rng.shuffle(pos);
    rng.shuffle(neg);
    std::vector<std::vector<int>> folds(static_cast<size_t>(k));
    for (size_t i = 0; i < pos.size(); ++i) folds[i % k].push_back(pos[i]);
    for (size_t i = 0; i < neg.size(); ++i) folds[i % k].push_back(neg[i]);
    for (auto& fold : folds) std::sort(fold.begin(), fold.end());
    return folds;
}

SplitResult stratified_split(const std::vector<int>& indices, const std::vector<int>& labels,
                             double fraction, uint64_t seed) {
    if (fraction <= 0.0 || fraction >= 1.0) {
        throw ConfigError("stratified_split: fraction must be in (0, 1)");
    }
    std::vector<int> pos, neg;
    for (int idx : indices) (labels.at(static_cast<size_t>(idx)) == 1 ? pos : neg).push_back(idx);
    Rng rng(seed, 0x53504c54ULL);
    rng.shuffle(pos);
    rng.shuffle(neg);
    SplitResult out;
    auto take = [&](std::vector<int>& from, size_t held) {
        held = std::min(held, from.size());
        for (size_t i = 0; i < from.size(); ++i) {
            (i < held ? out.held_out : out.rest).push_back(from[i]);
        }
    };
    size_t pos_held = static_cast<size_t>(std::ceil(fraction * static_cast<double>(pos.size())));
    if (!pos.empty() && pos_held == 0) pos_held = 1;
    if (!pos.empty() && pos_held == pos.size()) pos_held = pos.size() - 1;  // keep one for training
    take(pos, pos_held);
    take(neg, static_cast<size_t>(std::ceil(fraction * static_cast<double>(neg.size()))));
    std::sort(out.rest.begin(), out.rest.end());
    std::sort(out.held_out.begin(), out.held_out.end());
    return out;
}

// ---- baseline features ---------------------------------------------------------------

std::vector<double> aggregate_baseline_features(const PatientRecord& patient) {
    std::vector<double> out;
    out.reserve(patient.demo.size() + 1 + 3 * static_cast<size_t>(patient.lab.features) +
                static_cast<size_t>(patient.drug.features));
    out.insert(out.end(), patient.demo.begin(), patient.demo.end());

    double any_dx = 0.0;
    for (double v : patient.dx.values) {
        if (v != 0.0) {
            any_dx = 1.0;
            break;
        }
    }
    out.push_back(any_dx);

    const int f_lab = patient.lab.features;
    for (int f = 0; f < f_lab; ++f) {
        double sum = 0.0;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (int t = 0; t < patient.lab.steps; ++t) {
            const size_t cell = static_cast<size_t>(t) * f_lab + f;
            // Missing cells sit at the scaled mean (0) after imputation.
            const double v = (!patient.lab.mask.empty() && patient.lab.mask[cell] == 0.0)
                                 ? 0.0
                                 : patient.lab.values[cell];
            sum += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double n = std::max(1, patient.lab.steps);
        out.push_back(sum / n);
        out.push_back(patient.lab.steps > 0 ? lo : 0.0);
        out.push_back(patient.lab.steps > 0 ? hi : 0.0);
    }

    const int f_drug = patient.drug.features;
    for (int f = 0; f < f_drug; ++f) {
        double sum = 0.0;
        for (int t = 0; t < patient.drug.steps; ++t) {
            sum += patient.drug.values[static_cast<size_t>(t) * f_drug + f];
        }
        out.push_back(sum);
    }
    return out;
}

}  // namespace gvhd::data
