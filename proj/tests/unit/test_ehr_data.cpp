#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cohort/ehr_data.hpp"
#include "cohort/errors.hpp"
#include "cohort/precontext.hpp"
#include "test_support.hpp"

using namespace cohort;
using namespace cohort::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& text) {
    const fs::path dir = fs::temp_directory_path() / "cohort_unit";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream(p, std::ios::binary) << text;
    return p;
}

std::vector<int> labels_of(const Patient& p) {
    std::vector<int> out;
    for (const auto& v : p.visits) out.push_back(v.readmit_label.value_or(-1));
    return out;
}

Dataset timeline(const std::vector<std::int64_t>& days) {
    std::vector<RawVisit> visits;
    for (std::size_t i = 0; i < days.size(); ++i) {
        visits.push_back(raw_visit("v" + std::to_string(i), days[i], {"A"}));
    }
    return make_dataset({raw_patient("p", visits)});
}

}  // namespace

TEST_CASE("load_patients reads one patient and sorts visits by time") {
    const auto path = temp_file(
        "one.jsonl",
        R"({"patient_id":"p1","gender":"F","age":61,"visits":[{"visit_id":"b","admit_day":40,"dx":["250.00"]},{"visit_id":"a","admit_day":3,"dx":["401.9"],"rx":["m1"]}]})"
        "\n");
    const Dataset ds = load_patients(path);
    REQUIRE(ds.patients.size() == 1);
    const Patient& p = ds.patients[0];
    CHECK(p.demographics.gender == Gender::female);
    CHECK(p.demographics.age == 61);
    REQUIRE(p.visits.size() == 2);
    CHECK(p.visits[0].visit_id == "a");
    CHECK(p.visits[1].visit_id == "b");
    CHECK(p.visits[0].admit_time < p.visits[1].admit_time);
}

TEST_CASE("shared diagnosis codes get one vocabulary index") {
    const Dataset ds = make_dataset({raw_patient("a", {raw_visit("a0", 0, {"250.00", "401.9"})}),
                                     raw_patient("b", {raw_visit("b0", 0, {"250.00", "038.9"})})});
    const Vocabulary& vocab = ds.vocab(CodeKind::diagnosis);
    // Hand-built vocabulary: sorted unique ids.
    const std::vector<std::string> expected{"038.9", "250.00", "401.9"};
    CHECK(vocab.ids() == expected);
    const auto idx = vocab.index("250.00");
    CHECK(idx == 1);
    CHECK(std::count(ds.patients[0].visits[0].diagnosis_codes.begin(),
                     ds.patients[0].visits[0].diagnosis_codes.end(), idx) == 1);
    CHECK(std::count(ds.patients[1].visits[0].diagnosis_codes.begin(),
                     ds.patients[1].visits[0].diagnosis_codes.end(), idx) == 1);
    CHECK_FALSE(vocab.find("999").has_value());
}

TEST_CASE("malformed patient file reports the line") {
    const auto path = temp_file("bad.jsonl",
                                R"({"patient_id":"p1","gender":"M","age":3,"visits":[]})"
                                "\n{not json\n");
    try {
        load_patients(path);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("invalid records are rejected") {
    CHECK_THROWS_AS(make_dataset({raw_patient("a", {raw_visit("v", 0, {"A"})}, Gender::male, 130)}),
                    ValidationError);
    CHECK_THROWS_AS(make_dataset({raw_patient("a", {raw_visit("v", 0, {"A"})}),
                                  raw_patient("a", {raw_visit("w", 0, {"A"})})}),
                    ValidationError);
}

TEST_CASE("save and load patients round trip") {
    SyntheticSpec spec;
    spec.n_patients = 30;
    spec.seed = 4;
    const auto syn = generate_synthetic(spec);
    const fs::path path = fs::temp_directory_path() / "cohort_unit" / "rt.jsonl";
    fs::create_directories(path.parent_path());
    save_patients(syn.dataset, path);
    const Dataset back = load_patients(path);
    REQUIRE(back.patients.size() == syn.dataset.patients.size());
    for (std::size_t i = 0; i < back.patients.size(); ++i) {
        const auto& a = syn.dataset.patients[i];
        const auto& b = back.patients[i];
        CHECK(a.patient_id == b.patient_id);
        REQUIRE(a.visits.size() == b.visits.size());
        for (std::size_t k = 0; k < a.visits.size(); ++k) {
            CHECK(a.visits[k].diagnosis_codes == b.visits[k].diagnosis_codes);
            CHECK(a.visits[k].medication_codes == b.visits[k].medication_codes);
            CHECK(a.visits[k].lab_codes == b.visits[k].lab_codes);
        }
    }
}

TEST_CASE("readmission labels follow the window") {
    CHECK(labels_of(derive_readmission_labels(timeline({0, 20})).patients[0]) == std::vector<int>{1, 0});
    CHECK(labels_of(derive_readmission_labels(timeline({0, 45})).patients[0]) == std::vector<int>{0, 0});
    CHECK(labels_of(derive_readmission_labels(timeline({0})).patients[0]) == std::vector<int>{0});
    CHECK(labels_of(derive_readmission_labels(timeline({0, 30})).patients[0]) == std::vector<int>{1, 0});
    CHECK(labels_of(derive_readmission_labels(timeline({0, 31})).patients[0]) == std::vector<int>{0, 0});
}

TEST_CASE("labels do not depend on visit input order") {
    const std::vector<std::int64_t> days{100, 5, 40, 62, 300};
    const auto reference = labels_of(derive_readmission_labels(timeline({5, 40, 62, 100, 300})).patients[0]);
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto shuffled = days;
        rng.shuffle(shuffled);
        CHECK(labels_of(derive_readmission_labels(timeline(shuffled)).patients[0]) == reference);
    }
}

TEST_CASE("split_dataset sizes, determinism and partition") {
    std::vector<std::vector<std::string>> sets(10, {"A"});
    const Dataset ds = dataset_from_sets(sets);
    const auto s1 = split_dataset(ds, {0.8, 0.1, 0.1}, 7);
    CHECK(s1.train.patients.size() == 8);
    CHECK(s1.val.patients.size() == 1);
    CHECK(s1.test.patients.size() == 1);

    const auto s2 = split_dataset(ds, {0.8, 0.1, 0.1}, 7);
    const auto ids = [](const Dataset& d) {
        std::vector<std::string> out;
        for (const auto& p : d.patients) out.push_back(p.patient_id);
        return out;
    };
    CHECK(ids(s1.train) == ids(s2.train));
    CHECK(ids(s1.val) == ids(s2.val));
    CHECK(ids(s1.test) == ids(s2.test));

    std::multiset<std::string> all;
    for (const auto* part : {&s1.train, &s1.val, &s1.test}) {
        for (const auto& id : ids(*part)) all.insert(id);
    }
    CHECK(all.size() == 10);
    CHECK(std::set<std::string>(all.begin(), all.end()).size() == 10);

    CHECK_THROWS_AS(split_dataset(ds, {0.5, 0.5, 0.1}, 7), ValidationError);
}

TEST_CASE("split partitions larger populations for many seeds") {
    SyntheticSpec spec;
    spec.n_patients = 97;
    const Dataset ds = generate_synthetic(spec).dataset;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto s = split_dataset(ds, {0.7, 0.15, 0.15}, seed);
        std::set<std::string> seen;
        std::size_t total = 0;
        for (const auto* part : {&s.train, &s.val, &s.test}) {
            for (const auto& p : part->patients) {
                seen.insert(p.patient_id);
                ++total;
            }
        }
        CHECK(total == 97);
        CHECK(seen.size() == 97);
    }
}

TEST_CASE("zero-noise synthetic codes stay inside the cohort block") {
    SyntheticSpec spec;
    spec.n_patients = 200;
    spec.noise_rate = 0.0;
    spec.seed = 3;
    const auto syn = generate_synthetic(spec);
    const Vocabulary& vocab = syn.dataset.vocab(CodeKind::diagnosis);
    for (const auto& p : syn.dataset.patients) {
        const int cohort = syn.planted.at(p.patient_id);
        const std::string block = "B" + std::string(cohort < 10 ? "0" : "") + std::to_string(cohort);
        for (const auto& v : p.visits) {
            for (auto idx : v.diagnosis_codes) {
                CHECK(syn.ontology->node(vocab.id(idx)).parent_id == block);
            }
        }
    }
}

TEST_CASE("same-cohort patients overlap without noise") {
    // Visits draw more than half of the block, so any two sets intersect.
    SyntheticSpec spec;
    spec.n_patients = 120;
    spec.noise_rate = 0.0;
    spec.codes_per_cohort = 13;
    spec.seed = 5;
    const auto syn = generate_synthetic(spec);
    const auto& ps = syn.dataset.patients;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        for (std::size_t j = i + 1; j < ps.size(); ++j) {
            if (syn.planted.at(ps[i].patient_id) != syn.planted.at(ps[j].patient_id)) continue;
            CHECK(jaccard_similarity(ps[i], ps[j]) > 0.0);
            ++pairs;
        }
    }
    CHECK(pairs > 0);
}

TEST_CASE("synthetic data is deterministic per seed") {
    SyntheticSpec spec;
    spec.n_patients = 50;
    spec.seed = 9;
    const fs::path dir = fs::temp_directory_path() / "cohort_unit";
    fs::create_directories(dir);
    save_patients(generate_synthetic(spec).dataset, dir / "s1.jsonl");
    save_patients(generate_synthetic(spec).dataset, dir / "s2.jsonl");
    const auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    CHECK(slurp(dir / "s1.jsonl") == slurp(dir / "s2.jsonl"));
    spec.seed = 10;
    save_patients(generate_synthetic(spec).dataset, dir / "s3.jsonl");
    CHECK(slurp(dir / "s1.jsonl") != slurp(dir / "s3.jsonl"));
}

TEST_CASE("positive rate tracks the base rate without cohort shifts") {
    SyntheticSpec spec;
    spec.n_patients = 2000;
    spec.seed = 1;
    const auto syn = generate_synthetic(spec);
    std::size_t pos = 0, total = 0;
    for (const auto& p : syn.dataset.patients) {
        for (const auto& v : p.visits) {
            pos += v.readmit_label.value();
            ++total;
        }
    }
    const double rate = static_cast<double>(pos) / static_cast<double>(total);
    CHECK(std::abs(rate - spec.readmit_base_rate) <= 0.05);
}

TEST_CASE("cohort shifts move per-cohort rates") {
    CHECK(spread_shifts(3, 0.15) == std::vector<double>{-0.15, 0.0, 0.15});
    SyntheticSpec spec;
    spec.readmit_cohort_shift = {0.1};
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    spec.readmit_cohort_shift = spread_shifts(spec.n_planted_cohorts, 0.15);
    CHECK(spec.readmit_rate(0) == doctest::Approx(0.15));
    CHECK(spec.readmit_rate(spec.n_planted_cohorts - 1) == doctest::Approx(0.45));
}

TEST_CASE("multi-visit diagnosis union") {
    const Dataset ds = make_dataset(
        {raw_patient("a", {raw_visit("1", 0, {"C", "A"}), raw_visit("2", 9, {"B", "A"})})});
    CHECK(diagnosis_union(ds.patients[0]) == CodeSet{0, 1, 2});
}
