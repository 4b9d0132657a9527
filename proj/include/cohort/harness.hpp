#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cohort/ehr_data.hpp"
#include "cohort/metrics.hpp"
#include "cohort/precontext.hpp"

namespace cohort {

struct RunConfig {
    // Data: a JSONL patient file (plus optional ontology CSV), or synthesis.
    std::string data_path;
    std::string ontology_path;
    int readmit_window = 30;
    SyntheticSpec synthetic;
    double readmit_shift_spread = 0.0;  // used when synthetic.readmit_cohort_shift is empty

    std::string backbone = "code_mlp";
    int backbone_native_dim = 0;
    std::string method = "core";
    std::string ablation = "none";  // none | no_precontext | no_intra | no_inter
    int d = 32;
    int n_cohorts = 8;
    double gamma = 0.9;
    int K = 10;
    int S = 2;
    bool visit_level_cohorts = false;
    bool gcn_zero_init = false;
    bool tanh_visit = false;

    int pos_k = 5;
    int neg_k = 5;
    double lambda_pre = 0.1;
    int warmup_epochs = 5;

    double learning_rate = 1e-3;
    int epochs = 50;
    int batch_size = 64;
    std::array<double, 3> split{0.8, 0.1, 0.1};
    double threshold = 0.5;

    int node_dim = 32;
    int node_walks = 10;
    int node_walk_length = 20;
    int word_dim = 32;
    int word_epochs = 50;

    std::uint64_t seed = 0;
    std::string out_dir;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys and bad
/// values raise ConfigError.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);
/// Canonical key for an alias such as `gamma` or `model.gamma`.
std::string canonical_key(const std::string& key);
void validate_config(const RunConfig& cfg);
/// One `key = value` line per field, in a fixed order; `out` omitted.
std::string canonical_config(const RunConfig& cfg);
/// Hex FNV-1a of the canonical text.
std::string config_hash(const RunConfig& cfg);

struct PreparedData {
    Dataset dataset;  // labeled, ontology attached
    std::map<std::string, int> planted;
    std::array<std::vector<std::size_t>, 3> split;  // patient indices
};
PreparedData prepare_data(const RunConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double pre_loss = 0.0;
    double val_auprc = 0.0;
};

struct TrainResult {
    std::string config_hash;
    int best_epoch = 0;
    MetricsReport val;
    MetricsReport test;
    std::vector<EpochRecord> history;
    int n_cohorts = 0;           // effective cohort count, 0 when unused
    double cohort_ari = -1.0;    // against planted cohorts when known
};

/// Full pipeline; writes report and dumps under cfg.out_dir when set.
TrainResult run_train(const RunConfig& cfg);

/// Reloads a checkpoint directory and scores one split ("val" or "test").
MetricsReport run_eval(const std::filesystem::path& checkpoint_dir, const std::string& split = "test");

struct CohortDiscovery {
    CohortAssignment cohorts;
    double ari = -1.0;
    double final_pre_loss = 0.0;
};
/// Embeddings, pre-context warmup, then clustering of the patient features.
CohortDiscovery discover_cohorts(const RunConfig& cfg);

struct SweepRow {
    std::vector<std::pair<std::string, std::string>> values;
    std::string status = "ok";
    std::string error;
    TrainResult result;
};

using SweepGrid = std::vector<std::pair<std::string, std::vector<std::string>>>;

/// Cartesian product over the grid; failed runs are recorded and skipped.
std::vector<SweepRow> run_sweep(const RunConfig& base, const SweepGrid& grid);
/// Full CORE, then without pre-context, without intra, without inter.
std::vector<SweepRow> run_ablation(const RunConfig& base);

/// Parses `name=v1,v2,...`.
std::pair<std::string, std::vector<std::string>> parse_grid_arg(const std::string& text);

std::string report_json(const RunConfig& cfg, const TrainResult& result);
std::string sweep_report_json(const RunConfig& base, const std::vector<SweepRow>& rows);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
/// Line chart of `ys` against categorical `xs`.
void write_line_chart_svg(const std::filesystem::path& path, const std::string& title,
                          const std::string& x_label, const std::vector<std::string>& xs,
                          const std::vector<double>& ys);

}  // namespace cohort
