#include "cohort/cohort_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "cohort/csv.hpp"
#include "cohort/errors.hpp"
#include "cohort/nn.hpp"

namespace cohort {

double cosine_similarity(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b) {
    if (a.size() != b.size()) throw ValidationError("cosine: dimension mismatch");
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

IntraCohortSelection select_neighbors(std::size_t anchor, const std::vector<std::size_t>& candidates,
                                      const ad::Mat& features, double gamma, int K,
                                      const std::vector<std::size_t>& group) {
    if (K < 0) throw ValidationError("select_neighbors: K must be >= 0");
    if (anchor >= static_cast<std::size_t>(features.cols())) {
        throw ValidationError("select_neighbors: anchor out of range");
    }
    if (!group.empty() && group.size() != static_cast<std::size_t>(features.cols())) {
        throw ValidationError("select_neighbors: group size mismatch");
    }
    IntraCohortSelection out;
    out.gamma = gamma;
    out.K = K;
    if (K == 0) return out;

    const Vec a = features.col(static_cast<Eigen::Index>(anchor));
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(candidates.size());
    for (auto c : candidates) {
        if (c == anchor) continue;
        if (c >= static_cast<std::size_t>(features.cols())) {
            throw ValidationError("select_neighbors: candidate out of range");
        }
        if (!group.empty() && group[c] == group[anchor]) continue;
        const double s = cosine_similarity(a, features.col(static_cast<Eigen::Index>(c)));
        if (s > gamma) ranked.emplace_back(s, c);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return x.second < y.second;
    });
    // Duplicate candidate entries collapse to one.
    for (const auto& [s, c] : ranked) {
        if (out.neighbors.size() >= static_cast<std::size_t>(K)) break;
        if (!out.neighbors.empty() && out.neighbors.back() == c) continue;
        out.neighbors.push_back(c);
        out.similarity.push_back(s);
    }
    return out;
}

Vec intra_aggregate(const Vec& anchor, const std::vector<Vec>& neighbors) {
    Vec sum = anchor;
    for (const auto& n : neighbors) {
        if (n.size() != anchor.size()) throw ValidationError("intra_aggregate: dimension mismatch");
        sum += n;
    }
    return sum / static_cast<double>(neighbors.size() + 1);
}

ad::Mat InterCohortGraph::adjacency() const {
    ad::Mat a = ad::Mat::Zero(size(), size());
    for (const auto& [i, j] : edges) {
        a(i, j) = 1.0;
        a(j, i) = 1.0;
    }
    return a;
}

ad::Mat InterCohortGraph::normalized_adjacency() const {
    ad::Mat a = adjacency() + ad::Mat::Identity(size(), size());
    const Eigen::VectorXd inv_sqrt = a.rowwise().sum().array().rsqrt();
    return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

InterCohortGraph build_inter_graph(const std::vector<int>& cohort_of_sample, int n_cohorts,
                                   const ad::Mat& representations, int S) {
    if (n_cohorts < 1) throw ValidationError("inter graph: n_cohorts must be >= 1");
    if (S < 0 || S >= n_cohorts) {
        throw ValidationError("inter graph: S must lie in [0, n_cohorts), got " + std::to_string(S));
    }
    if (cohort_of_sample.size() != static_cast<std::size_t>(representations.cols())) {
        throw ValidationError("inter graph: one cohort index per sample required");
    }
    if (!representations.allFinite()) throw NumericError("cohort_model", "non-finite representations");

    InterCohortGraph g;
    g.S = S;
    g.centroids = ad::Mat::Zero(representations.rows(), n_cohorts);
    std::vector<std::size_t> count(static_cast<std::size_t>(n_cohorts), 0);
    for (std::size_t i = 0; i < cohort_of_sample.size(); ++i) {
        const int c = cohort_of_sample[i];
        if (c < 0 || c >= n_cohorts) throw ValidationError("inter graph: cohort index out of range");
        g.centroids.col(c) += representations.col(static_cast<Eigen::Index>(i));
        ++count[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < n_cohorts; ++c) {
        if (count[static_cast<std::size_t>(c)] == 0) {
            throw ValidationError("inter graph: cohort " + std::to_string(c) + " has no samples");
        }
        g.centroids.col(c) /= static_cast<double>(count[static_cast<std::size_t>(c)]);
    }
    for (int i = 0; i < n_cohorts; ++i) {
        std::vector<std::pair<double, int>> by_dist;
        for (int j = 0; j < n_cohorts; ++j) {
            if (j != i) by_dist.emplace_back((g.centroids.col(i) - g.centroids.col(j)).squaredNorm(), j);
        }
        std::sort(by_dist.begin(), by_dist.end());
        for (int k = 0; k < S; ++k) {
            const int j = by_dist[static_cast<std::size_t>(k)].second;
            g.edges.emplace(std::min(i, j), std::max(i, j));
        }
    }
    return g;
}

GCNParams::GCNParams(int d, Rng& rng, bool zero_init)
    : W1("gcn.W1", zero_init ? nn::zeros(d, d) : nn::glorot(d, d, rng)),
      W2("gcn.W2", zero_init ? nn::zeros(d, d) : nn::glorot(d, d, rng)) {}

ad::Var gcn_forward(ad::Tape& tape, const InterCohortGraph& graph, const GCNParams& params) {
    using namespace ad;
    if (!graph.centroids.allFinite()) throw NumericError("cohort_model", "non-finite centroids");
    if (params.W1.value.cols() != graph.centroids.rows()) {
        throw ValidationError("gcn: weight width != centroid width");
    }
    Var adj = tape.constant(graph.normalized_adjacency());
    Var x = tape.constant(graph.centroids);
    Var h1 = relu(matmul(matmul(tape.param(params.W1), x), adj));
    return matmul(matmul(tape.param(params.W2), h1), adj);
}

ad::Mat gcn_forward(const InterCohortGraph& graph, const GCNParams& params) {
    ad::Tape tape;
    return gcn_forward(tape, graph, params).value();
}

namespace {

ScoringMLP make_mlp(const std::string& prefix, int d, Rng& rng) {
    return {ad::Param(prefix + ".W1", nn::glorot(d, 2 * d, rng)), ad::Param(prefix + ".b1", nn::zeros(d, 1)),
            ad::Param(prefix + ".W2", nn::glorot(1, d, rng)), ad::Param(prefix + ".b2", nn::zeros(1, 1))};
}

ad::Var score(ad::Tape& tape, const ScoringMLP& mlp, ad::Var a, ad::Var b) {
    using namespace ad;
    Var h = ad::tanh(add(matmul(tape.param(mlp.W1), vstack({a, b})), tape.param(mlp.b1)));
    return add(matmul(tape.param(mlp.W2), h), tape.param(mlp.b2));
}

}  // namespace

FusionParams::FusionParams(int d, Rng& rng)
    : intra(make_mlp("fusion.intra", d, rng)),
      inter(make_mlp("fusion.inter", d, rng)),
      w_out("classifier.w", nn::glorot(1, d, rng)),
      b_out("classifier.b", nn::zeros(1, 1)) {}

std::vector<ad::Param*> FusionParams::attention_parameters() {
    return {&intra.W1, &intra.b1, &intra.W2, &intra.b2, &inter.W1, &inter.b1, &inter.W2, &inter.b2};
}

std::vector<ad::Param*> FusionParams::parameters() {
    auto out = attention_parameters();
    out.push_back(&w_out);
    out.push_back(&b_out);
    return out;
}

FusedBatch fuse(ad::Tape& tape, ad::Var R_ini, ad::Var R_intra, ad::Var R_inter,
                const ad::Mat& branch_mask, const FusionParams& params) {
    using namespace ad;
    const auto d = R_ini.rows();
    const auto b = R_ini.cols();
    if (R_intra.rows() != d || R_inter.rows() != d || R_intra.cols() != b || R_inter.cols() != b) {
        throw ValidationError("fuse: representation shapes differ");
    }
    if (d != params.dim()) throw ValidationError("fuse: representation width != fusion width");
    if (branch_mask.rows() != 2 || branch_mask.cols() != b) {
        throw ValidationError("fuse: branch mask must be 2 x batch");
    }
    Var s_intra = score(tape, params.intra, R_ini, R_intra);
    Var s_inter = score(tape, params.inter, R_ini, R_inter);
    Var att = masked_col_softmax(vstack({s_intra, s_inter}), branch_mask);
    Var out = add(add(R_ini, scale_cols(R_intra, row(att, 0))), scale_cols(R_inter, row(att, 1)));
    return {out, att};
}

RepresentationBundle fuse(const Vec& R_ini, const Vec& R_intra, const Vec& R_inter,
                          const FusionParams& params) {
    if (R_ini.size() != R_intra.size() || R_ini.size() != R_inter.size()) {
        throw ValidationError("fuse: dimension mismatch");
    }
    ad::Tape tape;
    auto fused = fuse(tape, tape.constant(R_ini), tape.constant(R_intra), tape.constant(R_inter),
                      ad::Mat::Ones(2, 1), params);
    RepresentationBundle out;
    out.R_ini = R_ini;
    out.R_intra = R_intra;
    out.R_inter = R_inter;
    out.R_final = fused.R_final.value().col(0);
    out.att_intra = fused.attention.value()(0, 0);
    out.att_inter = fused.attention.value()(1, 0);
    return out;
}

ad::Var classifier_logits(ad::Tape& tape, ad::Var R_final, const FusionParams& params) {
    return ad::add(ad::matmul(tape.param(params.w_out), R_final), tape.param(params.b_out));
}

double total_loss(const std::vector<double>& predictions, const std::vector<int>& labels, double L_pre,
                  double lambda_pre) {
    if (predictions.size() != labels.size() || predictions.empty()) {
        throw ValidationError("total_loss: predictions and labels must be non-empty and equal length");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double p = predictions[i];
        if (!(p > 0.0 && p < 1.0)) throw ValidationError("total_loss: predictions must lie in (0, 1)");
        sum -= labels[i] ? std::log(p) : std::log1p(-p);
    }
    const double loss = sum / static_cast<double>(predictions.size()) + lambda_pre * L_pre;
    if (!std::isfinite(loss)) throw NumericError("cohort_model", "non-finite total loss");
    return loss;
}

ad::Var total_loss(ad::Var logits, const ad::Mat& labels, ad::Var L_pre, double lambda_pre) {
    ad::Var down = ad::bce_logits_mean(logits, labels);
    if (!L_pre.valid() || lambda_pre == 0.0) return down;
    return ad::add(down, ad::scale(L_pre, lambda_pre));
}

void save_inter_graph_csv(const InterCohortGraph& graph, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write graph file " + path.string());
    out << "cohort_i,cohort_j\n";
    for (const auto& [i, j] : graph.edges) out << i << ',' << j << '\n';
}

void save_attention_csv(const std::vector<AttentionRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write attention file " + path.string());
    out << "sample_id,att_intra,att_inter\n" << std::setprecision(17);
    for (const auto& r : rows) {
        out << csv::quote(r.sample_id) << ',' << r.att_intra << ',' << r.att_inter << '\n';
    }
}

std::vector<RepresentationBundle> enhance_with_cohorts(const ad::Mat& R_ini, const ad::Mat& similarity_features,
                                                       const std::vector<int>& cohort_of_sample, int n_cohorts,
                                                       const CohortEnhanceOptions& options, const GCNParams& gcn,
                                                       const FusionParams& fusion,
                                                       const std::vector<std::size_t>& group) {
    const auto n = static_cast<std::size_t>(R_ini.cols());
    if (similarity_features.cols() != R_ini.cols() || cohort_of_sample.size() != n) {
        throw ValidationError("enhance_with_cohorts: one column and cohort per sample required");
    }
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n_cohorts));
    for (std::size_t i = 0; i < n; ++i) members.at(static_cast<std::size_t>(cohort_of_sample[i])).push_back(i);

    ad::Mat intra = R_ini;
    ad::Mat mask = ad::Mat::Zero(2, static_cast<Eigen::Index>(n));
    if (options.use_intra) {
        for (std::size_t i = 0; i < n; ++i) {
            auto sel = select_neighbors(i, members[static_cast<std::size_t>(cohort_of_sample[i])],
                                        similarity_features, options.gamma, options.K, group);
            if (sel.neighbors.empty()) continue;
            std::vector<Vec> nb;
            for (auto j : sel.neighbors) nb.push_back(R_ini.col(static_cast<Eigen::Index>(j)));
            intra.col(static_cast<Eigen::Index>(i)) = intra_aggregate(R_ini.col(static_cast<Eigen::Index>(i)), nb);
            mask(0, static_cast<Eigen::Index>(i)) = 1.0;
        }
    }
    ad::Mat inter = ad::Mat::Zero(R_ini.rows(), R_ini.cols());
    if (options.use_inter) {
        const auto graph = build_inter_graph(cohort_of_sample, n_cohorts, R_ini, options.S);
        const ad::Mat nodes = gcn_forward(graph, gcn);
        for (std::size_t i = 0; i < n; ++i) inter.col(static_cast<Eigen::Index>(i)) = nodes.col(cohort_of_sample[i]);
        mask.row(1).setOnes();
    }
    ad::Tape tape;
    auto fused = fuse(tape, tape.constant(R_ini), tape.constant(intra), tape.constant(inter), mask, fusion);
    std::vector<RepresentationBundle> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        out[i] = {R_ini.col(c), intra.col(c), inter.col(c), fused.R_final.value().col(c),
                  fused.attention.value()(0, c), fused.attention.value()(1, c)};
    }
    return out;
}

}  // namespace cohort
