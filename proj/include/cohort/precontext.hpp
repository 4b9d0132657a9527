#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cohort/autodiff.hpp"
#include "cohort/ehr_data.hpp"
#include "cohort/ontology_embeddings.hpp"
#include "cohort/visit_encoder.hpp"

namespace cohort {

/// |A ∩ B| / |A ∪ B| of the union-over-visits diagnosis sets.
double jaccard_similarity(const Patient& a, const Patient& b);
double jaccard_similarity(const CodeSet& a, const CodeSet& b);

struct SimilarityPair {
    std::uint32_t anchor = 0;  // index into Dataset::patients
    std::uint32_t other = 0;
    std::uint8_t label = 0;
};

struct SimilarityLabelSet {
    std::vector<std::string> patient_ids;  // index -> id, as in the source dataset
    std::vector<SimilarityPair> pairs;
    int pos_k = 5;
    int neg_k = 5;
};

/// Per anchor: the pos_k most similar patients (ties by ascending id) are
/// positives, then neg_k uniform draws from the rest are negatives.
SimilarityLabelSet build_similarity_labels(const Dataset& dataset, int pos_k, int neg_k,
                                           std::uint64_t seed);

struct PatientEncoderParams {
    // Gated recurrent unit, input and hidden width d.
    ad::Param W_z, U_z, b_z;
    ad::Param W_r, U_r, b_r;
    ad::Param W_n, U_n, b_n;
    // Reverse-time attention scorer.
    ad::Param W_Re, b_Re;  // 1 x d, 1 x 1
    // Bilinear similarity classifier.
    ad::Param W_sim, b_sim;  // d x d, 1 x 1

    PatientEncoderParams() = default;
    PatientEncoderParams(int d, Rng& rng);
    int dim() const { return static_cast<int>(W_z.value.rows()); }
    std::vector<ad::Param*> parameters();
    std::vector<ad::Param*> encoder_parameters();
    std::vector<ad::Param*> classifier_parameters();
};

struct PatientEncoding {
    ad::Var features;   // d x P
    ad::Var attention;  // T x P, row s = s-th visit counted from the latest
};

/// Tape form. `visit_columns[p]` lists the columns of `visit_features` that
/// belong to patient p, in chronological order.
PatientEncoding encode_patients(ad::Tape& tape, ad::Var visit_features,
                                const std::vector<std::vector<int>>& visit_columns,
                                const PatientEncoderParams& params);

struct PatientAttention {
    Vec features;
    std::vector<double> attention;  // chronological
};

/// Recurrent pass in reverse chronological order, scalar scores per step,
/// softmax, then the attention-weighted sum of the visit features.
PatientAttention encode_patient(const std::vector<VisitFeature>& visit_features,
                                const PatientEncoderParams& params);

/// Chronological attention of patient p, read off a batched encoding.
std::vector<double> chronological_attention(const ad::Mat& attention, std::size_t patient,
                                            std::size_t n_visits);

/// Pair logits F_i^T W_sim F_j + b_sim and their mean binary cross-entropy.
ad::Var similarity_loss(ad::Tape& tape, ad::Var features, const std::vector<int>& first,
                        const std::vector<int>& second, const ad::Mat& labels,
                        const PatientEncoderParams& params);

struct PatientFeatureTable {
    int dim = 0;
    std::vector<std::string> patient_ids;
    ad::Mat features;                       // d x N, column per patient
    std::vector<ad::Mat> visit_features;    // per patient, d x n_visits
    std::vector<std::vector<double>> attention;

    std::size_t size() const { return patient_ids.size(); }
    std::size_t index_of(const std::string& id) const;
};

/// Mean similarity BCE over every labeled pair.
double precontext_forward_loss(const SimilarityLabelSet& labels, const PatientFeatureTable& table,
                               const PatientEncoderParams& params);

class CohortAssignment {
   public:
    CohortAssignment() = default;
    /// Relabels to contiguous indices in order of first appearance; rejects
    /// empty cohorts.
    CohortAssignment(std::vector<std::string> ids, const std::vector<int>& labels);

    int n_cohorts() const { return n_cohorts_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<int>& labels() const { return labels_; }
    int cohort_of(std::size_t index) const { return labels_.at(index); }
    int cohort_of(const std::string& id) const;
    const std::vector<std::vector<std::size_t>>& members() const { return members_; }

   private:
    std::vector<std::string> ids_;
    std::vector<int> labels_;
    std::vector<std::vector<std::size_t>> members_;
    std::map<std::string, std::size_t> index_;
    int n_cohorts_ = 0;
};

void save_cohorts_csv(const CohortAssignment& cohorts, const std::filesystem::path& path);
CohortAssignment load_cohorts_csv(const std::filesystem::path& path);

/// Bottom-up average-linkage clustering under Euclidean distance, stopped at
/// n_clusters. Merge ties go to the pair with the smallest
/// (min rank of one side, min rank of the other). Returns labels numbered by
/// each cluster's smallest rank.
std::vector<int> agglomerative_average(const ad::Mat& points, int n_clusters,
                                       const std::vector<std::size_t>& rank);

CohortAssignment cluster_patients(const PatientFeatureTable& table, int n_cohorts);

}  // namespace cohort
