#include "cohort/baselines.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

#include "cohort/errors.hpp"
#include "cohort/rng.hpp"

namespace cohort {

namespace {

double sq_dist(const ad::Mat& t, std::size_t i, std::size_t j) {
    return (t.col(static_cast<Eigen::Index>(i)) - t.col(static_cast<Eigen::Index>(j))).squaredNorm();
}

ad::Mat mean_with_neighbors(const ad::Mat& table, const std::vector<std::vector<std::size_t>>& nbrs) {
    ad::Mat out = table;
    for (std::size_t i = 0; i < nbrs.size(); ++i) {
        auto col = out.col(static_cast<Eigen::Index>(i));
        for (auto j : nbrs[i]) col += table.col(static_cast<Eigen::Index>(j));
        col /= static_cast<double>(nbrs[i].size() + 1);
    }
    return out;
}

void check_finite(const ad::Mat& table, const char* who) {
    if (!table.allFinite()) throw NumericError("baselines", std::string(who) + ": non-finite input");
}

}  // namespace

std::vector<std::vector<std::size_t>> knn_neighbors(const ad::Mat& table, int K,
                                                    const std::vector<std::size_t>& group) {
    const auto n = static_cast<std::size_t>(table.cols());
    if (K < 0 || static_cast<std::size_t>(K) >= std::max<std::size_t>(n, 1)) {
        throw ValidationError("knn: K must lie in [0, sample count), got " + std::to_string(K));
    }
    if (!group.empty() && group.size() != n) throw ValidationError("knn: group size mismatch");
    check_finite(table, "knn");
    std::vector<std::vector<std::size_t>> out(n);
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || (!group.empty() && group[j] == group[i])) continue;
            cand.emplace_back(sq_dist(table, i, j), j);
        }
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(K), cand.size());
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t m = 0; m < k; ++m) out[i].push_back(cand[m].second);
    }
    return out;
}

ad::Mat knn_enhance(const ad::Mat& table, int K) { return mean_with_neighbors(table, knn_neighbors(table, K)); }

KMeansResult kmeans(const ad::Mat& table, int n_clusters, std::uint64_t seed, int max_iter, double tol) {
    const auto n = static_cast<std::size_t>(table.cols());
    if (n_clusters < 1 || static_cast<std::size_t>(n_clusters) > n) {
        throw ValidationError("kmeans: n_clusters must lie in [1, sample count]");
    }
    check_finite(table, "kmeans");
    Rng rng = Rng::derive(seed, "kmeans-init");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t k = 0; k < static_cast<std::size_t>(n_clusters); ++k) {
        std::swap(order[k], order[k + rng.below(n - k)]);
    }
    KMeansResult res;
    res.centroids.resize(table.rows(), n_clusters);
    for (int c = 0; c < n_clusters; ++c) res.centroids.col(c) = table.col(static_cast<Eigen::Index>(order[c]));
    res.labels.assign(n, 0);

    const auto assign = [&]() {
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < n_clusters; ++c) {
                const double dd = (table.col(static_cast<Eigen::Index>(i)) - res.centroids.col(c)).squaredNorm();
                if (dd < best_d) {
                    best_d = dd;
                    best = c;
                }
            }
            res.labels[i] = best;
        }
    };

    for (res.iterations = 1; res.iterations <= max_iter; ++res.iterations) {
        assign();
        ad::Mat next = ad::Mat::Zero(table.rows(), n_clusters);
        std::vector<std::size_t> count(static_cast<std::size_t>(n_clusters), 0);
        for (std::size_t i = 0; i < n; ++i) {
            next.col(res.labels[i]) += table.col(static_cast<Eigen::Index>(i));
            ++count[static_cast<std::size_t>(res.labels[i])];
        }
        for (int c = 0; c < n_clusters; ++c) {
            if (count[static_cast<std::size_t>(c)] > 0) next.col(c) /= static_cast<double>(count[static_cast<std::size_t>(c)]);
        }
        for (int c = 0; c < n_clusters; ++c) {
            if (count[static_cast<std::size_t>(c)] > 0) continue;
            // Reseed an emptied cluster at the point farthest from its centroid.
            std::size_t far = n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (count[static_cast<std::size_t>(res.labels[i])] < 2) continue;
                const double dd = (table.col(static_cast<Eigen::Index>(i)) - next.col(res.labels[i])).squaredNorm();
                if (dd > far_d) {
                    far_d = dd;
                    far = i;
                }
            }
            if (far == n) break;
            next.col(c) = table.col(static_cast<Eigen::Index>(far));
            --count[static_cast<std::size_t>(res.labels[far])];
            res.labels[far] = c;
            count[static_cast<std::size_t>(c)] = 1;
        }
        const double shift = (next - res.centroids).colwise().norm().maxCoeff();
        res.centroids = next;
        if (shift < tol) break;
    }
    res.iterations = std::min(res.iterations, max_iter);
    assign();
    return res;
}

std::vector<std::vector<std::size_t>> cluster_neighbors(const std::vector<int>& labels, int K,
                                                        std::uint64_t seed,
                                                        const std::vector<std::size_t>& group) {
    if (K < 0) throw ValidationError("cluster neighbors: K must be >= 0");
    if (!group.empty() && group.size() != labels.size()) {
        throw ValidationError("cluster neighbors: group size mismatch");
    }
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
    Rng rng = Rng::derive(seed, "cluster-neighbors");
    std::vector<std::vector<std::size_t>> out(labels.size());
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        pool.clear();
        for (auto j : members[labels[i]]) {
            if (j != i && (group.empty() || group[j] != group[i])) pool.push_back(j);
        }
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(K), pool.size());
        for (std::size_t m = 0; m < k; ++m) {
            std::swap(pool[m], pool[m + rng.below(pool.size() - m)]);
            out[i].push_back(pool[m]);
        }
    }
    return out;
}

ad::Mat kmeans_enhance(const ad::Mat& table, int n_clusters, int K, std::uint64_t seed) {
    const auto km = kmeans(table, n_clusters, seed);
    return mean_with_neighbors(table, cluster_neighbors(km.labels, K, seed));
}

ad::Mat grasp_lite_enhance(const ad::Mat& table, int n_clusters, int S, const GCNParams& gcn,
                           std::uint64_t seed) {
    const auto km = kmeans(table, n_clusters, seed);
    // Relabel to non-empty clusters so the graph has no isolated empty node.
    std::map<int, int> relabel;
    std::vector<int> labels;
    for (int l : km.labels) labels.push_back(relabel.emplace(l, static_cast<int>(relabel.size())).first->second);
    const int c = static_cast<int>(relabel.size());
    const auto graph = build_inter_graph(labels, c, table, std::min(S, c - 1));
    const ad::Mat nodes = gcn_forward(graph, gcn);
    ad::Mat out = table;
    for (std::size_t i = 0; i < labels.size(); ++i) out.col(static_cast<Eigen::Index>(i)) += nodes.col(labels[i]);
    return out;
}

MedicalCohortMode parse_medical_mode(const std::string& text) {
    if (text == "gender" || text == "mc_gender") return MedicalCohortMode::gender;
    if (text == "age" || text == "mc_age") return MedicalCohortMode::age;
    if (text == "gender_age" || text == "mc_gender_age") return MedicalCohortMode::gender_age;
    throw ConfigError("unknown medical cohort mode '" + text + "'");
}

int age_bin(int age, int width) {
    if (width < 1) throw ValidationError("age bin width must be >= 1");
    if (age < 0 || age > 120) throw ValidationError("age " + std::to_string(age) + " outside [0, 120]");
    const int last = (100 + width - 1) / width - 1;
    return std::min(age / width, last);
}

std::vector<int> medical_cohorts(const std::vector<Demographics>& demographics, MedicalCohortMode mode,
                                 int age_bin_width) {
    const int n_age = (100 + age_bin_width - 1) / age_bin_width;
    std::vector<int> out;
    out.reserve(demographics.size());
    for (const auto& d : demographics) {
        const int g = d.gender == Gender::male ? 0 : 1;
        switch (mode) {
            case MedicalCohortMode::gender:
                out.push_back(g);
                break;
            case MedicalCohortMode::age:
                out.push_back(age_bin(d.age, age_bin_width));
                break;
            case MedicalCohortMode::gender_age:
                out.push_back(g * n_age + age_bin(d.age, age_bin_width));
                break;
        }
    }
    return out;
}

std::vector<RepresentationBundle> medical_cohort_enhance(const std::vector<Demographics>& demographics,
                                                         const ad::Mat& R_ini,
                                                         const ad::Mat& similarity_features,
                                                         MedicalCohortMode mode,
                                                         const CohortEnhanceOptions& options,
                                                         const GCNParams& gcn, const FusionParams& fusion) {
    if (demographics.size() != static_cast<std::size_t>(R_ini.cols())) {
        throw ValidationError("medical cohorts: one demographics entry per sample required");
    }
    const auto raw = medical_cohorts(demographics, mode);
    std::map<int, int> relabel;
    for (int l : raw) relabel.emplace(l, 0);
    int next = 0;
    for (auto& [_, v] : relabel) v = next++;
    std::vector<int> labels;
    for (int l : raw) labels.push_back(relabel[l]);
    CohortEnhanceOptions opts = options;
    opts.S = std::min(opts.S, next - 1);
    return enhance_with_cohorts(R_ini, similarity_features, labels, next, opts, gcn, fusion);
}

}  // namespace cohort
