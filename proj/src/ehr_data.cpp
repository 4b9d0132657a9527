#include "cohort/ehr_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "cohort/errors.hpp"
#include "cohort/rng.hpp"

namespace cohort {

using json = nlohmann::ordered_json;

const char* to_string(CodeKind kind) {
    switch (kind) {
        case CodeKind::diagnosis:
            return "diagnosis";
        case CodeKind::medication:
            return "medication";
        case CodeKind::lab:
            return "lab";
    }
    return "?";
}

const CodeSet& Visit::codes(CodeKind kind) const {
    switch (kind) {
        case CodeKind::medication:
            return medication_codes;
        case CodeKind::lab:
            return lab_codes;
        default:
            return diagnosis_codes;
    }
}

Vocabulary::Vocabulary(std::vector<std::string> sorted_unique_ids) : ids_(std::move(sorted_unique_ids)) {
    index_.reserve(ids_.size());
    for (std::uint32_t i = 0; i < ids_.size(); ++i) {
        if (ids_[i].empty()) throw ValidationError("vocabulary: empty code id");
        if (!index_.emplace(ids_[i], i).second) {
            throw ValidationError("vocabulary: duplicate code id '" + ids_[i] + "'");
        }
    }
}

std::optional<std::uint32_t> Vocabulary::find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::uint32_t Vocabulary::index(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw LookupError("vocabulary: unknown code '" + id + "'");
    return it->second;
}

std::size_t Dataset::visit_count() const {
    std::size_t n = 0;
    for (const auto& p : patients) n += p.visits.size();
    return n;
}

namespace {

CodeSet to_code_set(const std::vector<std::string>& ids, const Vocabulary& vocab) {
    CodeSet out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(vocab.index(id));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Gender parse_gender(const std::string& g, std::size_t lineno) {
    if (g == "M") return Gender::male;
    if (g == "F") return Gender::female;
    throw ParseError("gender must be \"M\" or \"F\", got \"" + g + "\"", lineno);
}

}  // namespace

Dataset make_dataset(const std::vector<RawPatient>& raw) {
    std::array<std::set<std::string>, kNumCodeKinds> observed;
    std::unordered_set<std::string> seen_ids;
    for (const auto& p : raw) {
        if (p.patient_id.empty()) throw ValidationError("patient with empty patient_id");
        if (!seen_ids.insert(p.patient_id).second) {
            throw ValidationError("duplicate patient_id '" + p.patient_id + "'");
        }
        if (p.visits.empty()) {
            throw ValidationError("patient '" + p.patient_id + "' has no visits");
        }
        if (p.age < 0 || p.age > 120) {
            throw ValidationError("patient '" + p.patient_id + "' age " + std::to_string(p.age) +
                                  " outside [0, 120]");
        }
        for (const auto& v : p.visits) {
            observed[0].insert(v.dx.begin(), v.dx.end());
            observed[1].insert(v.rx.begin(), v.rx.end());
            observed[2].insert(v.lab.begin(), v.lab.end());
        }
    }
    Dataset ds;
    for (std::size_t k = 0; k < kNumCodeKinds; ++k) {
        ds.vocabularies[k] = Vocabulary({observed[k].begin(), observed[k].end()});
    }
    ds.patients.reserve(raw.size());
    for (const auto& rp : raw) {
        Patient p;
        p.patient_id = rp.patient_id;
        p.demographics = {rp.gender, rp.age};
        for (const auto& rv : rp.visits) {
            Visit v;
            v.visit_id = rv.visit_id;
            v.admit_time = rv.admit_day;
            v.diagnosis_codes = to_code_set(rv.dx, ds.vocabularies[0]);
            v.medication_codes = to_code_set(rv.rx, ds.vocabularies[1]);
            v.lab_codes = to_code_set(rv.lab, ds.vocabularies[2]);
            p.visits.push_back(std::move(v));
        }
        std::stable_sort(p.visits.begin(), p.visits.end(), [](const Visit& a, const Visit& b) {
            if (a.admit_time != b.admit_time) return a.admit_time < b.admit_time;
            return a.visit_id < b.visit_id;
        });
        ds.patients.push_back(std::move(p));
    }
    return ds;
}

std::vector<RawPatient> to_raw(const Dataset& dataset) {
    std::vector<RawPatient> out;
    out.reserve(dataset.patients.size());
    const auto ids = [](const CodeSet& set, const Vocabulary& vocab) {
        std::vector<std::string> v;
        for (auto i : set) v.push_back(vocab.id(i));
        return v;
    };
    for (const auto& p : dataset.patients) {
        RawPatient rp{p.patient_id, p.demographics.gender, p.demographics.age, {}};
        for (const auto& v : p.visits) {
            rp.visits.push_back({v.visit_id, v.admit_time,
                                 ids(v.diagnosis_codes, dataset.vocab(CodeKind::diagnosis)),
                                 ids(v.medication_codes, dataset.vocab(CodeKind::medication)),
                                 ids(v.lab_codes, dataset.vocab(CodeKind::lab))});
        }
        out.push_back(std::move(rp));
    }
    return out;
}

Dataset load_patients(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open patient file " + path.string());
    std::vector<RawPatient> raw;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            RawPatient p;
            p.patient_id = j.at("patient_id").get<std::string>();
            p.gender = parse_gender(j.at("gender").get<std::string>(), lineno);
            p.age = j.at("age").get<int>();
            for (const auto& jv : j.at("visits")) {
                RawVisit v;
                v.visit_id = jv.at("visit_id").get<std::string>();
                v.admit_day = jv.at("admit_day").get<std::int64_t>();
                v.dx = jv.value("dx", std::vector<std::string>{});
                v.rx = jv.value("rx", std::vector<std::string>{});
                v.lab = jv.value("lab", std::vector<std::string>{});
                p.visits.push_back(std::move(v));
            }
            raw.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw ParseError(e.what(), lineno);
        }
    }
    return make_dataset(raw);
}

void save_patients(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write patient file " + path.string());
    for (const auto& p : to_raw(dataset)) {
        json j;
        j["patient_id"] = p.patient_id;
        j["gender"] = p.gender == Gender::male ? "M" : "F";
        j["age"] = p.age;
        json visits = json::array();
        for (const auto& v : p.visits) {
            visits.push_back({{"visit_id", v.visit_id},
                              {"admit_day", v.admit_day},
                              {"dx", v.dx},
                              {"rx", v.rx},
                              {"lab", v.lab}});
        }
        j["visits"] = std::move(visits);
        out << j.dump() << '\n';
    }
}

Dataset derive_readmission_labels(const Dataset& dataset, int window_days) {
    Dataset out = dataset;
    for (auto& p : out.patients) {
        for (std::size_t i = 0; i < p.visits.size(); ++i) {
            if (i + 1 < p.visits.size()) {
                const auto gap = p.visits[i + 1].admit_time - p.visits[i].admit_time;
                p.visits[i].readmit_label = gap <= window_days ? 1 : 0;
            } else {
                p.visits[i].readmit_label = 0;
            }
        }
    }
    return out;
}

DatasetSplit split_dataset(const Dataset& dataset, const std::array<double, 3>& ratios,
                           std::uint64_t seed) {
    for (double r : ratios) {
        if (!(r > 0.0)) throw ValidationError("split ratios must be positive");
    }
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) {
        throw ValidationError("split ratios must sum to 1");
    }
    const std::size_t n = dataset.patients.size();
    if (n < 3) throw ValidationError("split needs at least 3 patients");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::derive(seed, "split");
    rng.shuffle(order);

    const auto rounded = [n](double r) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(r * static_cast<double>(n))));
    };
    const std::size_t n_val = rounded(ratios[1]);
    const std::size_t n_test = rounded(ratios[2]);
    if (n_val + n_test >= n) throw ValidationError("split leaves no training patients");
    const std::size_t n_train = n - n_val - n_test;

    const auto take = [&](std::size_t begin, std::size_t count) {
        std::vector<std::size_t> idx(order.begin() + static_cast<long>(begin),
                                     order.begin() + static_cast<long>(begin + count));
        std::sort(idx.begin(), idx.end());
        Dataset part;
        part.vocabularies = dataset.vocabularies;
        part.ontology = dataset.ontology;
        for (auto i : idx) part.patients.push_back(dataset.patients[i]);
        return part;
    };
    return {take(0, n_train), take(n_train, n_val), take(n_train + n_val, n_test)};
}

void SyntheticSpec::validate() const {
    if (n_patients < 1) throw ValidationError("synthetic: n_patients must be >= 1");
    if (n_planted_cohorts < 2) throw ValidationError("synthetic: n_planted_cohorts must be >= 2");
    if (codes_per_cohort < 1 || block_size < 1 || meds_per_visit < 0 || labs_per_visit < 0) {
        throw ValidationError("synthetic: code counts must be positive");
    }
    if (codes_per_cohort > block_size || meds_per_visit > block_size ||
        labs_per_visit > block_size) {
        throw ValidationError("synthetic: codes requested per visit exceed the cohort block size");
    }
    const long total = static_cast<long>(n_planted_cohorts) * block_size;
    if (total > 1000000) throw ValidationError("synthetic: vocabulary too large");
    const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(noise_rate) || !prob(readmit_base_rate)) {
        throw ValidationError("synthetic: probabilities must lie in [0, 1]");
    }
    if (!readmit_cohort_shift.empty() &&
        readmit_cohort_shift.size() != static_cast<std::size_t>(n_planted_cohorts)) {
        throw ValidationError("synthetic: readmit_cohort_shift needs one entry per cohort");
    }
    for (int c = 0; c < n_planted_cohorts; ++c) {
        if (!prob(readmit_rate(c))) {
            throw ValidationError("synthetic: base rate + shift leaves [0, 1]");
        }
    }
    if (!(visits_per_patient_mean >= 1.0)) {
        throw ValidationError("synthetic: visits_per_patient_mean must be >= 1");
    }
}

double SyntheticSpec::readmit_rate(int cohort) const {
    const double shift = readmit_cohort_shift.empty()
                             ? 0.0
                             : readmit_cohort_shift.at(static_cast<std::size_t>(cohort));
    return readmit_base_rate + shift;
}

std::vector<double> spread_shifts(int n_cohorts, double spread) {
    std::vector<double> out(static_cast<std::size_t>(n_cohorts), 0.0);
    if (n_cohorts < 2) return out;
    for (int c = 0; c < n_cohorts; ++c) {
        out[static_cast<std::size_t>(c)] = -spread + 2.0 * spread * c / (n_cohorts - 1);
    }
    return out;
}

namespace {

std::string pseudo_word(Rng& rng) {
    static const char* kSyllables[] = {"ka", "lo", "mi", "ne", "ru", "sa", "te", "vo",
                                       "zi", "pa", "do", "fe", "gu", "hi", "ja", "bo",
                                       "ce", "xu", "ly", "qo", "wen", "tor", "mal", "rin"};
    constexpr std::size_t n = sizeof(kSyllables) / sizeof(kSyllables[0]);
    std::string w;
    const std::size_t parts = 2 + rng.below(2);
    for (std::size_t i = 0; i < parts; ++i) w += kSyllables[rng.below(n)];
    return w;
}

std::string two_digit(int v) {
    std::string s = std::to_string(v);
    return s.size() < 2 ? "0" + s : s;
}

// Distinct draws of `count` items from [0, n) in draw order.
std::vector<int> sample_distinct(Rng& rng, int n, int count) {
    std::vector<int> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < count; ++i) {
        std::swap(pool[static_cast<std::size_t>(i)],
                  pool[static_cast<std::size_t>(i) + rng.below(static_cast<std::size_t>(n - i))]);
    }
    pool.resize(static_cast<std::size_t>(count));
    return pool;
}

std::vector<std::string> draw_codes(Rng& rng, int cohort, int per_visit, int n_cohorts,
                                    int block_size, double noise_rate,
                                    const std::string& prefix, const std::string& sep) {
    std::set<std::string> codes;
    for (int slot : sample_distinct(rng, block_size, per_visit)) {
        int block = cohort;
        int leaf = slot;
        if (rng.bernoulli(noise_rate)) {
            block = static_cast<int>(rng.below(static_cast<std::size_t>(n_cohorts)));
            leaf = static_cast<int>(rng.below(static_cast<std::size_t>(block_size)));
        }
        codes.insert(prefix + two_digit(block) + sep + two_digit(leaf));
    }
    return {codes.begin(), codes.end()};
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng = Rng::derive(spec.seed, "synthetic");
    Rng text_rng = Rng::derive(spec.seed, "synthetic-text");
    const int nc = spec.n_planted_cohorts;
    const int bs = spec.block_size;

    // Ontology: root -> block -> leaf, one block per planted cohort.
    std::vector<OntologyRow> rows;
    rows.push_back({"DX", OntologyTree::kRootSentinel, "diagnoses"});
    for (int b = 0; b < nc; ++b) {
        const std::string topic = pseudo_word(text_rng);
        const std::string block_id = "B" + two_digit(b);
        rows.push_back({block_id, "DX", topic + " " + pseudo_word(text_rng) + " disorders"});
        for (int j = 0; j < bs; ++j) {
            rows.push_back({"D" + two_digit(b) + "." + two_digit(j), block_id,
                            topic + " " + pseudo_word(text_rng) + " " + pseudo_word(text_rng)});
        }
    }
    auto ontology = std::make_shared<const OntologyTree>(OntologyTree::from_rows(rows));

    std::vector<RawPatient> raw;
    std::map<std::string, int> planted;
    const int width = std::max(6, static_cast<int>(std::to_string(spec.n_patients).size()));
    constexpr int kMaxVisits = 30;
    for (int i = 0; i < spec.n_patients; ++i) {
        std::string pid = std::to_string(i);
        pid = "P" + std::string(static_cast<std::size_t>(width) - pid.size(), '0') + pid;
        const int cohort = static_cast<int>(rng.below(static_cast<std::size_t>(nc)));
        planted[pid] = cohort;

        RawPatient p;
        p.patient_id = pid;
        p.gender = rng.bernoulli(0.5) ? Gender::female : Gender::male;
        p.age = 18 + static_cast<int>(rng.below(73));

        // Each visit draws its label; a positive forces a return within 30
        // days, a negative continues after a longer gap with probability
        // chosen so the expected visit count matches the requested mean.
        const double rate = spec.readmit_rate(cohort);
        const double cont = std::clamp(
            1.0 - 1.0 / (spec.visits_per_patient_mean * std::max(1e-12, 1.0 - rate)), 0.0, 1.0);
        std::int64_t day = static_cast<std::int64_t>(rng.below(3650));
        for (int k = 0; k < kMaxVisits; ++k) {
            RawVisit v;
            v.visit_id = pid + "-V" + two_digit(k);
            v.admit_day = day;
            v.dx = draw_codes(rng, cohort, spec.codes_per_cohort, nc, bs, spec.noise_rate, "D", ".");
            v.rx = draw_codes(rng, cohort, spec.meds_per_visit, nc, bs, spec.noise_rate, "M", "-");
            v.lab = draw_codes(rng, cohort, spec.labs_per_visit, nc, bs, spec.noise_rate, "L", "-");
            p.visits.push_back(std::move(v));
            if (rng.bernoulli(rate)) {
                day += 1 + static_cast<std::int64_t>(rng.below(30));
            } else if (rng.bernoulli(cont)) {
                day += 31 + static_cast<std::int64_t>(rng.below(335));
            } else {
                break;
            }
        }
        raw.push_back(std::move(p));
    }

    SyntheticData out;
    out.dataset = derive_readmission_labels(make_dataset(raw));
    out.dataset.ontology = ontology;
    out.ontology = ontology;
    out.planted = std::move(planted);
    return out;
}

CodeSet diagnosis_union(const Patient& patient) {
    CodeSet out;
    for (const auto& v : patient.visits) {
        out.insert(out.end(), v.diagnosis_codes.begin(), v.diagnosis_codes.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace cohort
