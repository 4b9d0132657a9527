#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cohort/ontology_tree.hpp"

namespace cohort {

enum class CodeKind : std::uint8_t { diagnosis = 0, medication = 1, lab = 2 };
inline constexpr std::size_t kNumCodeKinds = 3;
const char* to_string(CodeKind kind);

struct MedicalCode {
    CodeKind kind = CodeKind::diagnosis;
    std::string id;
    std::uint32_t vocab_index = 0;
};

/// Sorted, duplicate-free vocabulary indices of one code kind.
using CodeSet = std::vector<std::uint32_t>;

struct Visit {
    std::string visit_id;
    std::int64_t admit_time = 0;  // days since epoch
    CodeSet diagnosis_codes;
    CodeSet medication_codes;
    CodeSet lab_codes;
    std::optional<std::uint8_t> readmit_label;

    const CodeSet& codes(CodeKind kind) const;
};

enum class Gender : std::uint8_t { male, female };

struct Demographics {
    Gender gender = Gender::male;
    int age = 0;
};

struct Patient {
    std::string patient_id;
    Demographics demographics;
    std::vector<Visit> visits;  // ascending admit_time
};

/// Bidirectional id <-> index map for one code kind. Indices follow the
/// lexicographic order of ids.
class Vocabulary {
   public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> sorted_unique_ids);

    std::size_t size() const { return ids_.size(); }
    const std::string& id(std::uint32_t index) const { return ids_.at(index); }
    std::optional<std::uint32_t> find(const std::string& id) const;
    std::uint32_t index(const std::string& id) const;
    const std::vector<std::string>& ids() const { return ids_; }

   private:
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

struct Dataset {
    std::vector<Patient> patients;
    std::array<Vocabulary, kNumCodeKinds> vocabularies;
    std::shared_ptr<const OntologyTree> ontology;

    const Vocabulary& vocab(CodeKind kind) const {
        return vocabularies[static_cast<std::size_t>(kind)];
    }
    MedicalCode code(CodeKind kind, std::uint32_t index) const {
        return {kind, vocab(kind).id(index), index};
    }
    std::size_t visit_count() const;
};

/// Raw record with string code ids, the unit of both file IO and synthesis.
struct RawVisit {
    std::string visit_id;
    std::int64_t admit_day = 0;
    std::vector<std::string> dx, rx, lab;
};

struct RawPatient {
    std::string patient_id;
    Gender gender = Gender::male;
    int age = 0;
    std::vector<RawVisit> visits;
};

/// Builds vocabularies from observed codes, sorts visits, validates.
Dataset make_dataset(const std::vector<RawPatient>& raw);
std::vector<RawPatient> to_raw(const Dataset& dataset);

Dataset load_patients(const std::filesystem::path& path);
void save_patients(const Dataset& dataset, const std::filesystem::path& path);

/// Label 1 iff the next admission follows within `window_days`; the final
/// visit of every patient gets 0.
Dataset derive_readmission_labels(const Dataset& dataset, int window_days = 30);

struct DatasetSplit {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Partition by patient. `ratios` must be positive and sum to 1.
DatasetSplit split_dataset(const Dataset& dataset, const std::array<double, 3>& ratios,
                           std::uint64_t seed);

struct SyntheticSpec {
    int n_patients = 2000;
    int n_planted_cohorts = 8;
    /// Diagnosis codes drawn per visit from the cohort's block.
    int codes_per_cohort = 4;
    /// Diagnosis codes in each cohort's block.
    int block_size = 24;
    int meds_per_visit = 3;
    int labs_per_visit = 3;
    double noise_rate = 0.1;
    double readmit_base_rate = 0.3;
    std::vector<double> readmit_cohort_shift;  // one per cohort; empty = zeros
    double visits_per_patient_mean = 1.4;
    std::uint64_t seed = 0;

    void validate() const;
    double readmit_rate(int cohort) const;
};

/// Evenly spaced shifts from -spread to +spread over n cohorts.
std::vector<double> spread_shifts(int n_cohorts, double spread);

struct SyntheticData {
    Dataset dataset;
    std::shared_ptr<const OntologyTree> ontology;
    std::map<std::string, int> planted;  // patient_id -> planted cohort
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Union over visits of a patient's diagnosis indices, sorted.
CodeSet diagnosis_union(const Patient& patient);

}  // namespace cohort
