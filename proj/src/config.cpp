#include "gvhd/config.hpp"

#include <fstream>

#include "json.hpp"

namespace gvhd {

using nlohmann::json;

std::string objective_name(train::Objective objective) {
    switch (objective) {
        case train::Objective::AucMargin: return "auc_margin";
        case train::Objective::Bce: return "bce";
        case train::Objective::BceProgressive: return "bce_progressive";
    }
    return "auc_margin";
}

train::Objective objective_from_name(const std::string& name) {
    if (name == "auc_margin") return train::Objective::AucMargin;
    if (name == "bce") return train::Objective::Bce;
    if (name == "bce_progressive") return train::Objective::BceProgressive;
    throw ConfigError("config: unknown objective '" + name +
                      "' (expected auc_margin, bce, or bce_progressive)");
}

namespace {

void require_keys(const json& obj, const std::string& where,
                  std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* key : allowed) {
            if (item.key() == key) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError("config: unknown key '" + where + "." + item.key() + "'");
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    require_keys(j, "", {"paths", "model", "train", "objective", "ablation", "modalities", "generator"});

    RunConfig c;
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        require_keys(p, "paths", {"cohort_dir", "out_dir"});
        read(p, "cohort_dir", c.cohort_dir);
        read(p, "out_dir", c.out_dir);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        require_keys(m, "model",
                     {"hidden", "ffn_hidden", "freq_components", "extension_width", "branch_hidden",
                      "heads", "kernel_time"});
        read(m, "hidden", c.hidden);
        read(m, "ffn_hidden", c.ffn_hidden);
        read(m, "freq_components", c.freq_components);
        read(m, "extension_width", c.extension_width);
        read(m, "branch_hidden", c.branch_hidden);
        read(m, "heads", c.heads);
        read(m, "kernel_time", c.kernel_time);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        require_keys(t, "train",
                     {"batch_size", "positive_ratio", "learning_rate", "momentum", "weight_decay",
                      "proximal_weight", "clip_norm", "epochs", "steps_per_epoch", "valid_fraction",
                      "k_folds", "seeds"});
        read(t, "batch_size", c.batch_size);
        read(t, "positive_ratio", c.positive_ratio);
        read(t, "learning_rate", c.learning_rate);
        read(t, "momentum", c.momentum);
        read(t, "weight_decay", c.weight_decay);
        read(t, "proximal_weight", c.proximal_weight);
        read(t, "clip_norm", c.clip_norm);
        read(t, "epochs", c.epochs);
        read(t, "steps_per_epoch", c.steps_per_epoch);
        read(t, "valid_fraction", c.valid_fraction);
        read(t, "k_folds", c.k_folds);
        read(t, "seeds", c.seeds);
    }
    if (j.contains("objective")) {
        c.objective = objective_from_name(j.at("objective").get<std::string>());
    }
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        require_keys(a, "ablation", {"use_time_index", "missing_aware", "use_fusion"});
        read(a, "use_time_index", c.use_time_index);
        read(a, "missing_aware", c.missing_aware);
        read(a, "use_fusion", c.use_fusion);
    }
    if (j.contains("modalities")) {
        const auto& m = j.at("modalities");
        require_keys(m, "modalities", {"demo", "lab", "dx", "drug"});
        read(m, "demo", c.use_demo);
        read(m, "lab", c.use_lab);
        read(m, "dx", c.use_dx);
        read(m, "drug", c.use_drug);
    }
    if (j.contains("generator")) {
        const auto& g = j.at("generator");
        require_keys(g, "generator",
                     {"n_patients", "prevalence", "missing_ratio", "effect_size", "seed", "shapes"});
        read(g, "n_patients", c.generator.n_patients);
        read(g, "prevalence", c.generator.prevalence);
        read(g, "missing_ratio", c.generator.missing_ratio);
        read(g, "effect_size", c.generator.effect_size);
        read(g, "seed", c.generator.seed);
        if (g.contains("shapes")) {
            const auto& s = g.at("shapes");
            require_keys(s, "generator.shapes", {"demo", "lab", "dx", "drug"});
            auto& sh = c.generator.shapes;
            if (s.contains("demo")) {
                require_keys(s.at("demo"), "generator.shapes.demo", {"features"});
                read(s.at("demo"), "features", sh.demo_features);
            }
            if (s.contains("lab")) {
                require_keys(s.at("lab"), "generator.shapes.lab", {"features", "steps", "interval"});
                read(s.at("lab"), "features", sh.lab_features);
                read(s.at("lab"), "steps", sh.lab_steps);
            }
            if (s.contains("dx")) {
                require_keys(s.at("dx"), "generator.shapes.dx", {"features", "steps", "interval"});
                read(s.at("dx"), "features", sh.dx_features);
                read(s.at("dx"), "steps", sh.dx_steps);
            }
            if (s.contains("drug")) {
                require_keys(s.at("drug"), "generator.shapes.drug", {"features", "steps", "interval"});
                read(s.at("drug"), "features", sh.drug_features);
                read(s.at("drug"), "steps", sh.drug_steps);
            }
        }
    }
    c.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string RunConfig::to_json(int indent) const {
    const auto& sh = generator.shapes;
    json j{
        {"paths", {{"cohort_dir", cohort_dir}, {"out_dir", out_dir}}},
        {"model",
         {{"hidden", hidden},
          {"ffn_hidden", ffn_hidden},
          {"freq_components", freq_components},
          {"extension_width", extension_width},
          {"branch_hidden", branch_hidden},
          {"heads", heads},
          {"kernel_time", kernel_time}}},
        {"train",
         {{"batch_size", batch_size},
          {"positive_ratio", positive_ratio},
          {"learning_rate", learning_rate},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"proximal_weight", proximal_weight},
          {"clip_norm", clip_norm},
          {"epochs", epochs},
          {"steps_per_epoch", steps_per_epoch},
          {"valid_fraction", valid_fraction},
          {"k_folds", k_folds},
          {"seeds", seeds}}},
        {"objective", objective_name(objective)},
        {"ablation",
         {{"use_time_index", use_time_index},
          {"missing_aware", missing_aware},
          {"use_fusion", use_fusion}}},
        {"modalities", {{"demo", use_demo}, {"lab", use_lab}, {"dx", use_dx}, {"drug", use_drug}}},
        {"generator",
         {{"n_patients", generator.n_patients},
          {"prevalence", generator.prevalence},
          {"missing_ratio", generator.missing_ratio},
          {"effect_size", generator.effect_size},
          {"seed", generator.seed},
          {"shapes",
           {{"demo", {{"features", sh.demo_features}}},
            {"lab", {{"features", sh.lab_features}, {"steps", sh.lab_steps}, {"interval", "1-hour"}}},
            {"dx", {{"features", sh.dx_features}, {"steps", sh.dx_steps}, {"interval", "3-month"}}},
            {"drug",
             {{"features", sh.drug_features}, {"steps", sh.drug_steps}, {"interval", "1-day"}}}}}}}};
    return j.dump(indent);
}

model::ModelConfig RunConfig::model_config(const data::CohortShapes& shapes) const {
    model::ModelConfig m;
    m.demo_features = shapes.demo_features;
    m.lab_features = shapes.lab_features;
    m.lab_steps = shapes.lab_steps;
    m.dx_features = shapes.dx_features;
    m.dx_steps = shapes.dx_steps;
    m.drug_features = shapes.drug_features;
    m.drug_steps = shapes.drug_steps;
    m.hidden = hidden;
    m.ffn_hidden = ffn_hidden;
    m.freq_components = freq_components;
    m.extension_width = extension_width;
    m.branch_hidden = branch_hidden;
    m.heads = heads;
    m.kernel_time = kernel_time;
    m.use_time_index = use_time_index;
    m.missing_aware = missing_aware;
    m.use_fusion = use_fusion;
    m.use_demo = use_demo;
    m.use_lab = use_lab;
    m.use_dx = use_dx;
    m.use_drug = use_drug;
    return m;
}

train::TrainSpec RunConfig::train_spec(uint64_t run_seed) const {
    train::TrainSpec spec;
    spec.batch_size = batch_size;
    spec.positive_ratio = positive_ratio;
    spec.learning_rate = learning_rate;
    spec.momentum = momentum;
    spec.weight_decay = weight_decay;
    spec.proximal_weight = proximal_weight;
    spec.clip_norm = clip_norm;
    spec.epochs = epochs;
    spec.steps_per_epoch = steps_per_epoch;
    spec.objective = objective;
    spec.seed = run_seed;
    return spec;
}

void RunConfig::validate() const {
    if (batch_size < 2) throw ConfigError("config: train.batch_size must be >= 2");
    if (positive_ratio <= 0.0 || positive_ratio >= 1.0) {
        throw ConfigError("config: train.positive_ratio must be in (0, 1)");
    }
    if (k_folds < 2) throw ConfigError("config: train.k_folds must be >= 2");
    if (seeds.empty()) throw ConfigError("config: train.seeds must not be empty");
    if (valid_fraction <= 0.0 || valid_fraction >= 1.0) {
        throw ConfigError("config: train.valid_fraction must be in (0, 1)");
    }
    if (epochs < 0) throw ConfigError("config: train.epochs must be >= 0");
    // Architecture constraints are rechecked by ModelConfig::validate.
    data::CohortShapes probe;
    model_config(probe).validate();
}

}  // namespace gvhd
