#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "cohort/errors.hpp"
#include "cohort/harness.hpp"

namespace cohort {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
}

double to_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt_real(double x) {
    char buf[64];
    for (int prec = 6; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::stod(buf) == x) break;
    }
    return buf;
}

struct Field {
    std::string key;
    std::vector<std::string> aliases;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field int_field(std::string key, std::vector<std::string> aliases, T RunConfig::*member) {
    auto k = key;
    return {std::move(key), std::move(aliases),
            [member, k](RunConfig& c, const std::string& v) { c.*member = static_cast<T>(to_int(k, v)); },
            [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field real_field(std::string key, std::vector<std::string> aliases, double RunConfig::*member) {
    auto k = key;
    return {std::move(key), std::move(aliases),
            [member, k](RunConfig& c, const std::string& v) { c.*member = to_real(k, v); },
            [member](const RunConfig& c) { return fmt_real(c.*member); }};
}

Field bool_field(std::string key, std::vector<std::string> aliases, bool RunConfig::*member) {
    auto k = key;
    return {std::move(key), std::move(aliases),
            [member, k](RunConfig& c, const std::string& v) { c.*member = to_bool(k, v); },
            [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field text_field(std::string key, std::vector<std::string> aliases, std::string RunConfig::*member) {
    return {std::move(key), std::move(aliases),
            [member](RunConfig& c, const std::string& v) { c.*member = v; },
            [member](const RunConfig& c) { return c.*member; }};
}

template <typename T>
Field syn_int(std::string key, std::vector<std::string> aliases, T SyntheticSpec::*member) {
    auto k = key;
    return {std::move(key), std::move(aliases),
            [member, k](RunConfig& c, const std::string& v) { c.synthetic.*member = static_cast<T>(to_int(k, v)); },
            [member](const RunConfig& c) { return std::to_string(c.synthetic.*member); }};
}

Field syn_real(std::string key, std::vector<std::string> aliases, double SyntheticSpec::*member) {
    auto k = key;
    return {std::move(key), std::move(aliases),
            [member, k](RunConfig& c, const std::string& v) { c.synthetic.*member = to_real(k, v); },
            [member](const RunConfig& c) { return fmt_real(c.synthetic.*member); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(text_field("data.path", {"data"}, &RunConfig::data_path));
        f.push_back(text_field("data.ontology", {"ontology"}, &RunConfig::ontology_path));
        f.push_back(int_field("data.readmit_window", {"readmit_window"}, &RunConfig::readmit_window));
        f.push_back(syn_int("synthetic.n_patients", {"n_patients"}, &SyntheticSpec::n_patients));
        f.push_back(syn_int("synthetic.n_planted_cohorts", {"n_planted_cohorts"}, &SyntheticSpec::n_planted_cohorts));
        f.push_back(syn_int("synthetic.codes_per_cohort", {"codes_per_cohort"}, &SyntheticSpec::codes_per_cohort));
        f.push_back(syn_int("synthetic.block_size", {"block_size"}, &SyntheticSpec::block_size));
        f.push_back(syn_int("synthetic.meds_per_visit", {"meds_per_visit"}, &SyntheticSpec::meds_per_visit));
        f.push_back(syn_int("synthetic.labs_per_visit", {"labs_per_visit"}, &SyntheticSpec::labs_per_visit));
        f.push_back(syn_real("synthetic.noise_rate", {"noise_rate"}, &SyntheticSpec::noise_rate));
        f.push_back(syn_real("synthetic.readmit_base_rate", {"readmit_base_rate"}, &SyntheticSpec::readmit_base_rate));
        f.push_back(real_field("synthetic.readmit_shift_spread", {"readmit_shift_spread"},
                               &RunConfig::readmit_shift_spread));
        f.push_back({"synthetic.readmit_cohort_shift",
                     {"readmit_cohort_shift"},
                     [](RunConfig& c, const std::string& v) {
                         c.synthetic.readmit_cohort_shift.clear();
                         for (const auto& x : split_list(v)) {
                             c.synthetic.readmit_cohort_shift.push_back(to_real("synthetic.readmit_cohort_shift", x));
                         }
                     },
                     [](const RunConfig& c) {
                         std::string out;
                         for (double x : c.synthetic.readmit_cohort_shift) out += (out.empty() ? "" : ",") + fmt_real(x);
                         return out;
                     }});
        f.push_back(syn_real("synthetic.visits_per_patient_mean", {"visits_per_patient_mean"},
                             &SyntheticSpec::visits_per_patient_mean));
        f.push_back(text_field("model.backbone", {"backbone"}, &RunConfig::backbone));
        f.push_back(int_field("model.backbone_native_dim", {"backbone_native_dim"}, &RunConfig::backbone_native_dim));
        f.push_back(text_field("model.method", {"method"}, &RunConfig::method));
        f.push_back(text_field("model.ablation", {"ablation"}, &RunConfig::ablation));
        f.push_back(int_field("model.d", {"d"}, &RunConfig::d));
        f.push_back(int_field("model.n_cohorts", {"n_cohorts"}, &RunConfig::n_cohorts));
        f.push_back(real_field("model.gamma", {"gamma"}, &RunConfig::gamma));
        f.push_back(int_field("model.K", {"K"}, &RunConfig::K));
        f.push_back(int_field("model.S", {"S"}, &RunConfig::S));
        f.push_back(bool_field("model.visit_level_cohorts", {"visit_level_cohorts"}, &RunConfig::visit_level_cohorts));
        f.push_back(bool_field("model.gcn_zero_init", {"gcn_zero_init"}, &RunConfig::gcn_zero_init));
        f.push_back(bool_field("model.tanh_visit", {"tanh_visit"}, &RunConfig::tanh_visit));
        f.push_back(int_field("pre.pos_k", {"pos_k"}, &RunConfig::pos_k));
        f.push_back(int_field("pre.neg_k", {"neg_k"}, &RunConfig::neg_k));
        f.push_back(real_field("pre.lambda", {"lambda_pre"}, &RunConfig::lambda_pre));
        f.push_back(int_field("pre.warmup_epochs", {"warmup_epochs"}, &RunConfig::warmup_epochs));
        f.push_back(real_field("train.learning_rate", {"learning_rate", "lr"}, &RunConfig::learning_rate));
        f.push_back(int_field("train.epochs", {"epochs"}, &RunConfig::epochs));
        f.push_back(int_field("train.batch_size", {"batch_size"}, &RunConfig::batch_size));
        f.push_back({"train.split",
                     {"split"},
                     [](RunConfig& c, const std::string& v) {
                         const auto parts = split_list(v);
                         if (parts.size() != 3) throw ConfigError("config key 'train.split': expected three ratios");
                         for (std::size_t i = 0; i < 3; ++i) c.split[i] = to_real("train.split", parts[i]);
                     },
                     [](const RunConfig& c) {
                         return fmt_real(c.split[0]) + "," + fmt_real(c.split[1]) + "," + fmt_real(c.split[2]);
                     }});
        f.push_back(real_field("train.threshold", {"threshold"}, &RunConfig::threshold));
        f.push_back(int_field("embed.node_dim", {"node_dim"}, &RunConfig::node_dim));
        f.push_back(int_field("embed.node_walks", {"node_walks"}, &RunConfig::node_walks));
        f.push_back(int_field("embed.node_walk_length", {"node_walk_length"}, &RunConfig::node_walk_length));
        f.push_back(int_field("embed.word_dim", {"word_dim"}, &RunConfig::word_dim));
        f.push_back(int_field("embed.word_epochs", {"word_epochs"}, &RunConfig::word_epochs));
        f.push_back({"seed",
                     {},
                     [](RunConfig& c, const std::string& v) {
                         const long long s = to_int("seed", v);
                         if (s < 0) throw ConfigError("config key 'seed' must be >= 0");
                         c.seed = static_cast<std::uint64_t>(s);
                     },
                     [](const RunConfig& c) { return std::to_string(c.seed); }});
        f.push_back(text_field("out", {"output"}, &RunConfig::out_dir));
        return f;
    }();
    return table;
}

const Field& find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) return f;
        for (const auto& a : f.aliases) {
            if (a == key) return f;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::string canonical_key(const std::string& key) { return find_field(key).key; }

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    find_field(key).set(cfg, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            set_config_value(base, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig cfg = parse_config(ss.str());
    // Relative data paths resolve against the config file's directory.
    const auto base = path.parent_path();
    for (auto* p : {&cfg.data_path, &cfg.ontology_path}) {
        if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
    }
    return cfg;
}

void validate_config(const RunConfig& c) {
    const auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    static const std::vector<std::string> methods = {"core",   "knn",       "kmeans",        "grasp_lite",
                                                     "mc_gender", "mc_age", "mc_gender_age", "backbone_only"};
    require(std::find(methods.begin(), methods.end(), c.method) != methods.end(),
            "unknown method '" + c.method + "'");
    require(c.ablation == "none" || c.ablation == "no_precontext" || c.ablation == "no_intra" ||
                c.ablation == "no_inter",
            "unknown ablation '" + c.ablation + "'");
    require(c.ablation == "none" || c.method == "core", "ablations apply to method = core only");
    require(c.d >= 1, "d must be >= 1");
    require(c.backbone_native_dim >= 0, "backbone_native_dim must be >= 0");
    require(c.n_cohorts >= 2, "n_cohorts must be >= 2");
    require(c.gamma > 0.0 && c.gamma <= 1.0, "gamma must lie in (0, 1]");
    require(c.K >= 0, "K must be >= 0");
    require(c.S >= 0, "S must be >= 0");
    require(c.method != "core" || c.S < c.n_cohorts, "S must be smaller than n_cohorts");
    require(c.method != "knn" || c.K >= 1, "knn needs K >= 1");
    require(c.pos_k >= 1 && c.neg_k >= 0, "pos_k must be >= 1 and neg_k >= 0");
    require(c.lambda_pre >= 0.0, "lambda_pre must be >= 0");
    require(c.warmup_epochs >= 0, "warmup_epochs must be >= 0");
    require(c.learning_rate > 0.0, "learning_rate must be > 0");
    require(c.epochs >= 1, "epochs must be >= 1");
    require(c.batch_size >= 1, "batch_size must be >= 1");
    require(c.threshold >= 0.0 && c.threshold <= 1.0, "threshold must lie in [0, 1]");
    require(c.readmit_window >= 1, "readmit_window must be >= 1");
    require(c.node_dim >= 2 && c.word_dim >= 1, "embedding dims too small");
    require(c.node_walks >= 1 && c.node_walk_length >= 2 && c.word_epochs >= 1, "embedding schedule too small");
    require(c.readmit_shift_spread >= 0.0, "readmit_shift_spread must be >= 0");
    if (c.data_path.empty()) {
        try {
            c.synthetic.validate();
        } catch (const ValidationError& e) {
            throw ConfigError(e.what());
        }
    } else {
        require(std::filesystem::exists(c.data_path), "data file not found: " + c.data_path);
        require(c.ontology_path.empty() || std::filesystem::exists(c.ontology_path),
                "ontology file not found: " + c.ontology_path);
    }
}

std::string canonical_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) {
        if (f.key == "out") continue;
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

std::string config_hash(const RunConfig& cfg) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : canonical_config(cfg)) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::pair<std::string, std::vector<std::string>> parse_grid_arg(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("grid entry '" + text + "': expected name=v1,v2,...");
    const std::string name = canonical_key(trim(text.substr(0, eq)));
    auto values = split_list(text.substr(eq + 1));
    if (values.empty()) throw ConfigError("grid entry '" + text + "': no values");
    return {name, values};
}

}  // namespace cohort
