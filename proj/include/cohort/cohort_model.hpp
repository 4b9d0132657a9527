#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cohort/autodiff.hpp"
#include "cohort/ontology_embeddings.hpp"
#include "cohort/rng.hpp"

namespace cohort {

/// Cosine similarity; 0 when either side has zero norm.
double cosine_similarity(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b);

struct IntraCohortSelection {
    std::vector<std::size_t> neighbors;  // descending similarity
    std::vector<double> similarity;
    double gamma = 0.9;
    int K = 10;
};

/// Greedy selection: candidates (anchor excluded) are ranked by cosine of
/// their similarity feature against the anchor's, ties by ascending index,
/// and taken while the similarity exceeds gamma and fewer than K are held.
/// Columns of `features` are samples. Candidates whose `group` equals the
/// anchor's are skipped when `group` is non-empty.
IntraCohortSelection select_neighbors(std::size_t anchor, const std::vector<std::size_t>& candidates,
                                      const ad::Mat& features, double gamma, int K,
                                      const std::vector<std::size_t>& group = {});

/// Mean over the anchor and its neighbors.
Vec intra_aggregate(const Vec& anchor, const std::vector<Vec>& neighbors);

struct InterCohortGraph {
    int S = 0;
    ad::Mat centroids;                              // d x n_cohorts
    std::set<std::pair<int, int>> edges;            // undirected, first < second
    int size() const { return static_cast<int>(centroids.cols()); }
    /// 0/1 adjacency without self-loops.
    ad::Mat adjacency() const;
    /// D^-1/2 (A + I) D^-1/2.
    ad::Mat normalized_adjacency() const;
};

/// Centroid per cohort from the member columns of `representations`, then
/// S nearest centroids per node (Euclidean, ties by index), symmetrized.
InterCohortGraph build_inter_graph(const std::vector<int>& cohort_of_sample, int n_cohorts,
                                   const ad::Mat& representations, int S);

/// Weights act on column vectors: H1 = relu(W1 X Â), out = W2 H1 Â.
struct GCNParams {
    ad::Param W1, W2;

    GCNParams() = default;
    GCNParams(int d, Rng& rng, bool zero_init = false);
    std::vector<ad::Param*> parameters() { return {&W1, &W2}; }
};

/// d x n_cohorts node outputs on the tape.
ad::Var gcn_forward(ad::Tape& tape, const InterCohortGraph& graph, const GCNParams& params);
ad::Mat gcn_forward(const InterCohortGraph& graph, const GCNParams& params);

struct ScoringMLP {
    ad::Param W1, b1;  // d x 2d, d
    ad::Param W2, b2;  // 1 x d, 1
};

struct FusionParams {
    ScoringMLP intra, inter;
    ad::Param w_out, b_out;  // downstream classifier, 1 x d and 1 x 1

    FusionParams() = default;
    FusionParams(int d, Rng& rng);
    int dim() const { return static_cast<int>(w_out.value.cols()); }
    std::vector<ad::Param*> parameters();
    std::vector<ad::Param*> attention_parameters();
    std::vector<ad::Param*> classifier_parameters() { return {&w_out, &b_out}; }
};

struct RepresentationBundle {
    Vec R_ini, R_intra, R_inter, R_final;
    double att_intra = 0.0;
    double att_inter = 0.0;
};

struct FusedBatch {
    ad::Var R_final;    // d x B
    ad::Var attention;  // 2 x B: row 0 intra, row 1 inter
};

/// Batched fusion. `branch_mask` (2 x B, 0/1) removes a branch from the
/// softmax; a sample with both branches masked gets zero attention.
FusedBatch fuse(ad::Tape& tape, ad::Var R_ini, ad::Var R_intra, ad::Var R_inter,
                const ad::Mat& branch_mask, const FusionParams& params);

RepresentationBundle fuse(const Vec& R_ini, const Vec& R_intra, const Vec& R_inter,
                          const FusionParams& params);

/// Downstream logits w_out R + b_out, 1 x B.
ad::Var classifier_logits(ad::Tape& tape, ad::Var R_final, const FusionParams& params);

/// Mean BCE of probabilities against labels plus lambda_pre * L_pre.
double total_loss(const std::vector<double>& predictions, const std::vector<int>& labels,
                  double L_pre, double lambda_pre = 0.1);
/// Tape form on logits.
ad::Var total_loss(ad::Var logits, const ad::Mat& labels, ad::Var L_pre, double lambda_pre);

void save_inter_graph_csv(const InterCohortGraph& graph, const std::filesystem::path& path);

struct AttentionRow {
    std::string sample_id;
    double att_intra = 0.0;
    double att_inter = 0.0;
};
void save_attention_csv(const std::vector<AttentionRow>& rows, const std::filesystem::path& path);

struct CohortEnhanceOptions {
    double gamma = 0.9;
    int K = 10;
    int S = 2;
    bool use_intra = true;
    bool use_inter = true;
};

/// Forward pass of the intra and inter branches plus fusion over fixed
/// cohorts. Columns of `R_ini` and `similarity_features` are samples.
/// Samples sharing a `group` value never select each other.
std::vector<RepresentationBundle> enhance_with_cohorts(const ad::Mat& R_ini, const ad::Mat& similarity_features,
                                                       const std::vector<int>& cohort_of_sample, int n_cohorts,
                                                       const CohortEnhanceOptions& options, const GCNParams& gcn,
                                                       const FusionParams& fusion,
                                                       const std::vector<std::size_t>& group = {});

}  // namespace cohort
