// Command-line front end: gen-data, train, eval, sweep, ablate.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <nlohmann/json.hpp>

#include "cohort/errors.hpp"
#include "cohort/harness.hpp"

namespace fs = std::filesystem;
using namespace cohort;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "config file (dotted keys, key = value)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "overrides the config seed");
    cmd->add_option("--out", c.out, "output directory");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out_dir = c.out;
    validate_config(cfg);
    return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

int gen_data(const RunConfig& cfg) {
    if (cfg.out_dir.empty()) throw ConfigError("gen-data needs --out");
    PreparedData data = prepare_data(cfg);
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    save_patients(data.dataset, out / "patients.jsonl");
    save_ontology_csv(*data.dataset.ontology, out / "ontology.csv");
    std::size_t positives = 0;
    for (const auto& p : data.dataset.patients) {
        for (const auto& v : p.visits) positives += v.readmit_label.value_or(0);
    }
    if (!data.planted.empty()) {
        std::ofstream planted(out / "planted.csv", std::ios::binary);
        planted << "patient_id,cohort_index\n";
        for (const auto& [id, c] : data.planted) planted << id << ',' << c << '\n';
    }
    nlohmann::ordered_json j;
    j["config_hash"] = config_hash(cfg);
    j["n_patients"] = data.dataset.patients.size();
    j["n_visits"] = data.dataset.visit_count();
    j["n_positive_visits"] = positives;
    j["split_patients"] = {data.split[0].size(), data.split[1].size(), data.split[2].size()};
    write_file(out / "report.json", j.dump(2) + "\n");
    std::cout << "wrote " << data.dataset.patients.size() << " patients to " << out.string() << "\n";
    return 0;
}

void print_metrics(const char* what, const MetricsReport& m) {
    std::cout << what << ": auprc=" << m.auprc << " accuracy=" << m.accuracy << " precision=" << m.precision
              << " recall=" << m.recall << " f1=" << m.f1 << " n=" << m.n_samples << "\n";
}

void print_rows(const std::vector<SweepRow>& rows) {
    for (const auto& r : rows) {
        for (const auto& [k, v] : r.values) std::cout << k << '=' << v << ' ';
        if (r.status == "ok") {
            std::cout << "test_auprc=" << r.result.test.auprc << "\n";
        } else {
            std::cout << "error: " << r.error << "\n";
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cohort-enhanced readmission prediction"};
    app.require_subcommand(1);

    Common gen_c, train_c, eval_c, sweep_c, ablate_c;
    auto* gen = app.add_subcommand("gen-data", "synthesize a dataset and write it out");
    add_common(gen, gen_c);
    auto* train = app.add_subcommand("train", "train one model and report test metrics");
    add_common(train, train_c);
    auto* eval = app.add_subcommand("eval", "reload a checkpoint and score a split");
    add_common(eval, eval_c);
    std::string checkpoint, split = "test";
    eval->add_option("--checkpoint", checkpoint, "run or checkpoint directory")->required();
    eval->add_option("--split", split, "val or test")->check(CLI::IsMember({"train", "val", "test"}));
    auto* sweep = app.add_subcommand("sweep", "grid over n_cohorts, gamma, K, S, lambda_pre, method");
    add_common(sweep, sweep_c);
    std::vector<std::string> grid_args;
    sweep->add_option("--grid", grid_args, "name=v1,v2,... (repeatable)");
    auto* ablate = app.add_subcommand("ablate", "full model and its three single-module ablations");
    add_common(ablate, ablate_c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return gen_data(resolve(gen_c));
        if (train->parsed()) {
            const auto res = run_train(resolve(train_c));
            std::cout << "best epoch " << res.best_epoch << "\n";
            print_metrics("val", res.val);
            print_metrics("test", res.test);
            return 0;
        }
        if (eval->parsed()) {
            const auto m = run_eval(checkpoint, split);
            print_metrics(split.c_str(), m);
            if (!eval_c.out.empty()) {
                nlohmann::ordered_json j;
                j["split"] = split;
                j["auprc"] = m.auprc;
                j["accuracy"] = m.accuracy;
                j["precision"] = m.precision;
                j["recall"] = m.recall;
                j["f1"] = m.f1;
                j["threshold"] = m.threshold;
                j["n_samples"] = m.n_samples;
                write_file(fs::path(eval_c.out) / "report.json", j.dump(2) + "\n");
            }
            return 0;
        }
        if (sweep->parsed()) {
            SweepGrid grid;
            for (const auto& g : grid_args) grid.push_back(parse_grid_arg(g));
            print_rows(run_sweep(resolve(sweep_c), grid));
            return 0;
        }
        if (ablate->parsed()) {
            print_rows(run_ablation(resolve(ablate_c)));
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric divergence in " << e.module() << ": " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
