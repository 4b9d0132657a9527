#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "cohort/errors.hpp"
#include "cohort/harness.hpp"
#include "cohort/metrics.hpp"
#include "cohort/precontext.hpp"

namespace py = pybind11;
using namespace cohort;

namespace {

using Overrides = std::map<std::string, std::string>;

RunConfig make_config(const Overrides& overrides) {
    RunConfig cfg;
    for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
    validate_config(cfg);
    return cfg;
}

py::dict metrics_dict(const MetricsReport& m) {
    py::dict d;
    d["auprc"] = m.auprc;
    d["accuracy"] = m.accuracy;
    d["precision"] = m.precision;
    d["recall"] = m.recall;
    d["f1"] = m.f1;
    d["threshold"] = m.threshold;
    d["n_samples"] = m.n_samples;
    return d;
}

py::dict result_dict(const TrainResult& r) {
    py::dict d;
    d["config_hash"] = r.config_hash;
    d["best_epoch"] = r.best_epoch;
    d["val"] = metrics_dict(r.val);
    d["test"] = metrics_dict(r.test);
    d["n_cohorts"] = r.n_cohorts;
    d["cohort_ari"] = r.cohort_ari;
    py::list history;
    for (const auto& e : r.history) {
        py::dict h;
        h["epoch"] = e.epoch;
        h["train_loss"] = e.train_loss;
        h["pre_loss"] = e.pre_loss;
        h["val_auprc"] = e.val_auprc;
        history.append(h);
    }
    d["history"] = history;
    return d;
}

CodeSet to_code_set(std::vector<std::uint32_t> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Cohort-enhanced patient representation learning";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<LookupError>(m, "LookupError", PyExc_KeyError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def("canonical_config", [](const Overrides& o) { return canonical_config(make_config(o)); },
          py::arg("overrides") = Overrides{});
    m.def("config_hash", [](const Overrides& o) { return config_hash(make_config(o)); },
          py::arg("overrides") = Overrides{});
    m.def("load_config", [](const std::filesystem::path& p) { return canonical_config(load_config(p)); });

    m.def(
        "train",
        [](const Overrides& o) {
            const RunConfig cfg = make_config(o);
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = run_train(cfg);
            }
            py::dict d = result_dict(r);
            d["report_json"] = report_json(cfg, r);
            return d;
        },
        py::arg("overrides") = Overrides{});

    m.def(
        "evaluate",
        [](const std::filesystem::path& dir, const std::string& split) {
            MetricsReport r;
            {
                py::gil_scoped_release release;
                r = run_eval(dir, split);
            }
            return metrics_dict(r);
        },
        py::arg("checkpoint_dir"), py::arg("split") = "test");

    m.def(
        "sweep",
        [](const Overrides& o, const SweepGrid& grid) {
            const RunConfig cfg = make_config(o);
            std::vector<SweepRow> rows;
            {
                py::gil_scoped_release release;
                rows = run_sweep(cfg, grid);
            }
            py::list out;
            for (const auto& row : rows) {
                py::dict d;
                d["values"] = row.values;
                d["status"] = row.status;
                d["error"] = row.error;
                if (row.status == "ok") d["result"] = result_dict(row.result);
                out.append(d);
            }
            return out;
        },
        py::arg("overrides"), py::arg("grid"));

    m.def(
        "synthetic_summary",
        [](const Overrides& o) {
            const RunConfig cfg = make_config(o);
            const PreparedData p = prepare_data(cfg);
            py::dict d;
            d["n_patients"] = p.dataset.patients.size();
            d["n_visits"] = p.dataset.visit_count();
            d["n_diagnosis_codes"] = p.dataset.vocab(CodeKind::diagnosis).size();
            d["n_medication_codes"] = p.dataset.vocab(CodeKind::medication).size();
            d["n_lab_codes"] = p.dataset.vocab(CodeKind::lab).size();
            d["planted"] = p.planted;
            d["split_sizes"] = std::vector<std::size_t>{p.split[0].size(), p.split[1].size(), p.split[2].size()};
            return d;
        },
        py::arg("overrides") = Overrides{});

    m.def("compute_metrics",
          [](const std::vector<double>& s, const std::vector<int>& y, double thr) {
              return metrics_dict(compute_metrics(s, y, thr));
          },
          py::arg("scores"), py::arg("labels"), py::arg("threshold") = 0.5);
    m.def("average_precision", &average_precision, py::arg("scores"), py::arg("labels"));
    m.def("adjusted_rand_index", &adjusted_rand_index, py::arg("a"), py::arg("b"));
    m.def(
        "jaccard_similarity",
        [](const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) {
            return jaccard_similarity(to_code_set(a), to_code_set(b));
        },
        py::arg("a"), py::arg("b"));
}
