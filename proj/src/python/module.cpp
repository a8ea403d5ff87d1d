#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "gvhd/baseline.hpp"
#include "gvhd/cohort.hpp"
#include "gvhd/config.hpp"
#include "gvhd/crossval.hpp"
#include "gvhd/gradcheck_suite.hpp"
#include "gvhd/metrics.hpp"
#include "gvhd/objective.hpp"

namespace py = pybind11;

namespace {

gvhd::RunConfig parse_config(const std::string& config_json) {
    return config_json.empty() ? gvhd::RunConfig{} : gvhd::RunConfig::from_json_text(config_json);
}

std::string generate_cohort_py(const std::string& config_json, const std::string& out_dir) {
    gvhd::RunConfig config = parse_config(config_json);
    if (!out_dir.empty()) config.cohort_dir = out_dir;
    const gvhd::data::Cohort cohort = gvhd::data::generate_cohort(config.generator);
    gvhd::data::save_cohort(cohort, config.cohort_dir);
    return gvhd::data::generator_config_json(cohort.manifest.generator);
}

std::string cross_validate_py(const std::string& config_json, int jobs, bool write_files) {
    const gvhd::RunConfig config = parse_config(config_json);
    const gvhd::data::Cohort cohort = gvhd::data::load_cohort(config.cohort_dir);
    const gvhd::eval::EvalReport report = gvhd::eval::cross_validate(cohort, config, jobs);
    if (write_files) gvhd::eval::write_report_files(report, config.out_dir);
    return gvhd::eval::report_json(report);
}

py::dict gradcheck_py(int trials) {
    py::dict out;
    for (const auto& entry : gvhd::run_gradcheck_suite(gvhd::kGradcheckSuiteSeed, trials, 1e-3, 1e-4)) {
        out[py::str(entry.op)] = entry.max_rel_err;
    }
    return out;
}

std::vector<double> predict_cohort_py(const std::string& config_json, uint64_t params_seed) {
    const gvhd::RunConfig config = parse_config(config_json);
    const gvhd::data::Cohort cohort = gvhd::data::load_cohort(config.cohort_dir);
    std::vector<int> all(cohort.patients.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    const gvhd::data::Scaler scaler = gvhd::data::fit_scaler(cohort.patients, all);
    std::vector<gvhd::data::PatientRecord> scaled;
    scaled.reserve(cohort.patients.size());
    for (const auto& p : cohort.patients) scaled.push_back(gvhd::data::apply_scaler(p, scaler));
    gvhd::model::ModelParams params =
        gvhd::model::ModelParams::init(config.model_config(cohort.manifest.shapes), params_seed);
    return gvhd::train::score_patients(params, scaled, all);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "GVHD risk model core: metrics, losses, cohort generation, cross-validation";

    m.def("roc_auc", &gvhd::eval::roc_auc, py::arg("labels"), py::arg("scores"),
          "Probability a random positive outranks a random negative (ties count half).");
    m.def("auprc", &gvhd::eval::auprc, py::arg("labels"), py::arg("scores"),
          "Average precision over descending-score prefixes.");
    m.def(
        "confusion_at_threshold",
        [](const std::vector<int>& labels, const std::vector<double>& scores, double threshold) {
            const auto c = gvhd::eval::confusion_at_threshold(labels, scores, threshold);
            py::dict out;
            out["tp"] = c.tp;
            out["fp"] = c.fp;
            out["tn"] = c.tn;
            out["fn"] = c.fn;
            out["recall"] = c.recall;
            out["specificity"] = c.specificity;
            return out;
        },
        py::arg("labels"), py::arg("scores"), py::arg("threshold"));
    m.def("select_threshold", &gvhd::eval::select_threshold, py::arg("labels"), py::arg("scores"),
          "Youden's J maximizing threshold over midpoints of adjacent distinct scores.");

    m.def(
        "pairwise_auc_margin_loss",
        [](const std::vector<double>& pos, const std::vector<double>& neg) {
            return gvhd::train::pairwise_auc_margin_value(pos, neg);
        },
        py::arg("positive_scores"), py::arg("negative_scores"),
        "Mean log(1 + exp(-(s_pos - s_neg))) over all positive x negative pairs.");
    m.def(
        "bce_loss",
        [](const std::vector<double>& scores, const std::vector<double>& labels) {
            return gvhd::train::bce_value(scores, labels);
        },
        py::arg("scores"), py::arg("labels"));

    m.def("default_config", [] { return gvhd::RunConfig{}.to_json(); },
          "Fully resolved default configuration as JSON.");
    m.def("generate_cohort", &generate_cohort_py, py::arg("config_json") = std::string(),
          py::arg("out_dir") = std::string(),
          "Write cohort.manifest.json + cohort.jsonl; returns the generator config JSON.");
    m.def("cross_validate", &cross_validate_py, py::arg("config_json") = std::string(),
          py::arg("jobs") = 1, py::arg("write_files") = false,
          "Run the stratified CV protocol; returns the report as JSON.");
    m.def("gradcheck", &gradcheck_py, py::arg("trials") = 5,
          "Max relative central-difference error per op.");
    m.def("predict_cohort", &predict_cohort_py, py::arg("config_json") = std::string(),
          py::arg("params_seed") = 0,
          "Scores for every patient under freshly initialized parameters.");

    m.attr("__version__") = "0.1.0";
}
