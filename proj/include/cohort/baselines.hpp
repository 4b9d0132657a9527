#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cohort/autodiff.hpp"
#include "cohort/cohort_model.hpp"
#include "cohort/ehr_data.hpp"

namespace cohort {

/// Per sample, its K nearest other samples (Euclidean, ties by index).
/// Columns of `table` are samples. Samples sharing a `group` value are
/// never neighbors of each other.
std::vector<std::vector<std::size_t>> knn_neighbors(const ad::Mat& table, int K,
                                                    const std::vector<std::size_t>& group = {});

/// Mean of each sample and its K nearest neighbors.
ad::Mat knn_enhance(const ad::Mat& table, int K);

struct KMeansResult {
    std::vector<int> labels;
    ad::Mat centroids;
    int iterations = 0;
};

/// Lloyd's iterations from n_clusters distinct uniformly drawn samples.
/// An emptied cluster is reseeded at the point farthest from its centroid.
KMeansResult kmeans(const ad::Mat& table, int n_clusters, std::uint64_t seed, int max_iter = 100,
                    double tol = 1e-6);

/// Up to K members of the sample's own cluster, drawn uniformly without
/// replacement, self and same-group samples excluded.
std::vector<std::vector<std::size_t>> cluster_neighbors(const std::vector<int>& labels, int K,
                                                        std::uint64_t seed,
                                                        const std::vector<std::size_t>& group = {});

ad::Mat kmeans_enhance(const ad::Mat& table, int n_clusters, int K, std::uint64_t seed);

/// R_ini plus the GCN output of the sample's cluster; clusters come from
/// k-means on R_ini itself. No intra-cohort branch.
ad::Mat grasp_lite_enhance(const ad::Mat& table, int n_clusters, int S, const GCNParams& gcn,
                           std::uint64_t seed);

enum class MedicalCohortMode { gender, age, gender_age };

MedicalCohortMode parse_medical_mode(const std::string& text);

/// floor(age / width), with ages of 100 and over merged into the last bin.
int age_bin(int age, int width = 10);

/// Cohort index per demographics entry: gender (2), age bin (10) or
/// gender * 10 + age bin (20).
std::vector<int> medical_cohorts(const std::vector<Demographics>& demographics, MedicalCohortMode mode,
                                 int age_bin_width = 10);

/// Demographic cohorts, relabeled to the non-empty ones, then the CORE intra
/// and inter machinery on top.
std::vector<RepresentationBundle> medical_cohort_enhance(const std::vector<Demographics>& demographics,
                                                         const ad::Mat& R_ini,
                                                         const ad::Mat& similarity_features,
                                                         MedicalCohortMode mode,
                                                         const CohortEnhanceOptions& options,
                                                         const GCNParams& gcn, const FusionParams& fusion);

}  // namespace cohort
