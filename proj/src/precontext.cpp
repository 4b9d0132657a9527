#include "cohort/precontext.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <tuple>

#include "cohort/csv.hpp"
#include "cohort/errors.hpp"
#include "cohort/nn.hpp"
#include "cohort/rng.hpp"

namespace cohort {

double jaccard_similarity(const CodeSet& a, const CodeSet& b) {
    if (a.empty() || b.empty()) {
        throw ValidationError("jaccard_similarity: empty diagnosis set");
    }
    std::size_t inter = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++inter;
            ++ia;
            ++ib;
        }
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double jaccard_similarity(const Patient& a, const Patient& b) {
    return jaccard_similarity(diagnosis_union(a), diagnosis_union(b));
}

SimilarityLabelSet build_similarity_labels(const Dataset& dataset, int pos_k, int neg_k,
                                           std::uint64_t seed) {
    const std::size_t n = dataset.patients.size();
    if (pos_k < 0 || neg_k < 0) throw ValidationError("similarity labels: k must be >= 0");
    if (n < static_cast<std::size_t>(pos_k + neg_k + 1)) {
        throw ValidationError("similarity labels: need at least pos_k + neg_k + 1 patients, have " +
                              std::to_string(n));
    }
    std::vector<CodeSet> unions(n);
    for (std::size_t i = 0; i < n; ++i) {
        unions[i] = diagnosis_union(dataset.patients[i]);
        if (unions[i].empty()) {
            throw ValidationError("similarity labels: patient '" + dataset.patients[i].patient_id +
                                  "' has no diagnosis codes");
        }
    }

    SimilarityLabelSet out;
    out.pos_k = pos_k;
    out.neg_k = neg_k;
    for (const auto& p : dataset.patients) out.patient_ids.push_back(p.patient_id);

    Rng rng = Rng::derive(seed, "similarity-labels");
    std::vector<std::pair<double, std::uint32_t>> scored;
    std::vector<std::uint32_t> rest;
    for (std::size_t a = 0; a < n; ++a) {
        scored.clear();
        for (std::size_t b = 0; b < n; ++b) {
            if (b == a) continue;
            scored.emplace_back(jaccard_similarity(unions[a], unions[b]), static_cast<std::uint32_t>(b));
        }
        const auto by_rank = [&](const auto& x, const auto& y) {
            if (x.first != y.first) return x.first > y.first;
            return out.patient_ids[x.second] < out.patient_ids[y.second];
        };
        std::partial_sort(scored.begin(), scored.begin() + pos_k, scored.end(), by_rank);
        for (int k = 0; k < pos_k; ++k) {
            out.pairs.push_back({static_cast<std::uint32_t>(a), scored[static_cast<std::size_t>(k)].second, 1});
        }
        rest.clear();
        for (std::size_t k = static_cast<std::size_t>(pos_k); k < scored.size(); ++k) {
            rest.push_back(scored[k].second);
        }
        std::sort(rest.begin(), rest.end());
        for (int k = 0; k < neg_k; ++k) {
            const std::size_t pick = static_cast<std::size_t>(k) + rng.below(rest.size() - static_cast<std::size_t>(k));
            std::swap(rest[static_cast<std::size_t>(k)], rest[pick]);
            out.pairs.push_back({static_cast<std::uint32_t>(a), rest[static_cast<std::size_t>(k)], 0});
        }
    }
    return out;
}

PatientEncoderParams::PatientEncoderParams(int d, Rng& rng)
    : W_z("pre.gru.W_z", nn::glorot(d, d, rng)),
      U_z("pre.gru.U_z", nn::glorot(d, d, rng)),
      b_z("pre.gru.b_z", nn::zeros(d, 1)),
      W_r("pre.gru.W_r", nn::glorot(d, d, rng)),
      U_r("pre.gru.U_r", nn::glorot(d, d, rng)),
      b_r("pre.gru.b_r", nn::zeros(d, 1)),
      W_n("pre.gru.W_n", nn::glorot(d, d, rng)),
      U_n("pre.gru.U_n", nn::glorot(d, d, rng)),
      b_n("pre.gru.b_n", nn::zeros(d, 1)),
      W_Re("pre.W_Re", nn::glorot(1, d, rng)),
      b_Re("pre.b_Re", nn::zeros(1, 1)),
      W_sim("pre.W_sim", 0.1 * ad::Mat::Identity(d, d)),
      b_sim("pre.b_sim", nn::zeros(1, 1)) {}

std::vector<ad::Param*> PatientEncoderParams::encoder_parameters() {
    return {&W_z, &U_z, &b_z, &W_r, &U_r, &b_r, &W_n, &U_n, &b_n, &W_Re, &b_Re};
}

std::vector<ad::Param*> PatientEncoderParams::classifier_parameters() { return {&W_sim, &b_sim}; }

std::vector<ad::Param*> PatientEncoderParams::parameters() {
    auto out = encoder_parameters();
    for (auto* p : classifier_parameters()) out.push_back(p);
    return out;
}

PatientEncoding encode_patients(ad::Tape& tape, ad::Var visit_features,
                                const std::vector<std::vector<int>>& visit_columns,
                                const PatientEncoderParams& p) {
    using namespace ad;
    const int d = p.dim();
    if (visit_features.rows() != d) {
        throw ValidationError("encode_patients: visit feature width != encoder width");
    }
    const auto n_patients = static_cast<Eigen::Index>(visit_columns.size());
    std::size_t steps = 0;
    for (const auto& cols : visit_columns) {
        if (cols.empty()) throw ValidationError("encode_patients: patient without visits");
        steps = std::max(steps, cols.size());
    }

    Var Wz = tape.param(p.W_z), Uz = tape.param(p.U_z), bz = tape.param(p.b_z);
    Var Wr = tape.param(p.W_r), Ur = tape.param(p.U_r), br = tape.param(p.b_r);
    Var Wn = tape.param(p.W_n), Un = tape.param(p.U_n), bn = tape.param(p.b_n);
    Var WRe = tape.param(p.W_Re), bRe = tape.param(p.b_Re);

    // Longest histories first, so the columns still running at step s are a
    // prefix of this order and only that prefix is multiplied.
    std::vector<std::size_t> order(visit_columns.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return visit_columns[a].size() > visit_columns[b].size();
    });
    std::vector<std::size_t> slot(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) slot[order[k]] = k;

    Var h;
    std::size_t active = order.size();
    std::vector<Var> inputs;
    std::vector<Var> scores;
    Mat step_mask = Mat::Zero(static_cast<Eigen::Index>(steps), n_patients);
    for (std::size_t s = 0; s < steps; ++s) {
        while (active > 0 && visit_columns[order[active - 1]].size() <= s) --active;
        std::vector<int> idx(visit_columns.size(), -1);
        std::vector<int> idx_active(active);
        std::vector<int> back(visit_columns.size(), -1);
        for (std::size_t q = 0; q < visit_columns.size(); ++q) {
            const auto& cols = visit_columns[q];
            if (s < cols.size()) {
                idx[q] = cols[cols.size() - 1 - s];
                idx_active[slot[q]] = idx[q];
                back[q] = static_cast<int>(slot[q]);
                step_mask(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(q)) = 1.0;
            }
        }
        Var x = gather_cols(visit_features, idx_active);
        if (s == 0) {
            h = tape.constant(Mat::Zero(d, static_cast<Eigen::Index>(active)));
        } else if (static_cast<std::size_t>(h.cols()) != active) {
            std::vector<int> prefix(active);
            std::iota(prefix.begin(), prefix.end(), 0);
            h = gather_cols(h, prefix);
        }
        Var z = sigmoid(add(add(matmul(Wz, x), matmul(Uz, h)), bz));
        Var r = sigmoid(add(add(matmul(Wr, x), matmul(Ur, h)), br));
        Var n = ad::tanh(add(add(matmul(Wn, x), cmul(r, matmul(Un, h))), bn));
        h = add(cmul(affine(z, -1.0, 1.0), n), cmul(z, h));
        inputs.push_back(gather_cols(visit_features, idx));
        scores.push_back(gather_cols(add(matmul(WRe, h), bRe), back));
    }
    Var alpha = masked_col_softmax(vstack(scores), step_mask);
    Var features = scale_cols(inputs[0], row(alpha, 0));
    for (std::size_t s = 1; s < steps; ++s) {
        features = add(features, scale_cols(inputs[s], row(alpha, static_cast<Eigen::Index>(s))));
    }
    return {features, alpha};
}

std::vector<double> chronological_attention(const ad::Mat& attention, std::size_t patient,
                                            std::size_t n_visits) {
    std::vector<double> out(n_visits);
    for (std::size_t i = 0; i < n_visits; ++i) {
        out[i] = attention(static_cast<Eigen::Index>(n_visits - 1 - i), static_cast<Eigen::Index>(patient));
    }
    return out;
}

PatientAttention encode_patient(const std::vector<VisitFeature>& visit_features,
                                const PatientEncoderParams& params) {
    if (visit_features.empty()) throw ValidationError("encode_patient: empty visit list");
    const int d = params.dim();
    ad::Mat v(d, static_cast<Eigen::Index>(visit_features.size()));
    std::vector<int> cols;
    for (std::size_t i = 0; i < visit_features.size(); ++i) {
        if (visit_features[i].vector.size() != d) {
            throw ValidationError("encode_patient: visit feature width != encoder width");
        }
        v.col(static_cast<Eigen::Index>(i)) = visit_features[i].vector;
        cols.push_back(static_cast<int>(i));
    }
    ad::Tape tape;
    auto enc = encode_patients(tape, tape.constant(v), {cols}, params);
    return {enc.features.value().col(0),
            chronological_attention(enc.attention.value(), 0, visit_features.size())};
}

ad::Var similarity_loss(ad::Tape& tape, ad::Var features, const std::vector<int>& first,
                        const std::vector<int>& second, const ad::Mat& labels,
                        const PatientEncoderParams& params) {
    using namespace ad;
    Var a = gather_cols(features, first);
    Var b = gather_cols(features, second);
    Var logits = add(col_dot(a, matmul(tape.param(params.W_sim), b)), tape.param(params.b_sim));
    return bce_logits_mean(logits, labels);
}

std::size_t PatientFeatureTable::index_of(const std::string& id) const {
    auto it = std::find(patient_ids.begin(), patient_ids.end(), id);
    if (it == patient_ids.end()) throw LookupError("feature table: unknown patient '" + id + "'");
    return static_cast<std::size_t>(it - patient_ids.begin());
}

double precontext_forward_loss(const SimilarityLabelSet& labels, const PatientFeatureTable& table,
                               const PatientEncoderParams& params) {
    if (!table.features.allFinite()) {
        throw NumericError("precontext", "non-finite patient features");
    }
    if (labels.pairs.empty()) throw ValidationError("precontext loss: no labeled pairs");
    std::map<std::string, int> column;
    for (std::size_t i = 0; i < table.patient_ids.size(); ++i) {
        column[table.patient_ids[i]] = static_cast<int>(i);
    }
    std::vector<int> first, second;
    ad::Mat y(1, static_cast<Eigen::Index>(labels.pairs.size()));
    for (std::size_t k = 0; k < labels.pairs.size(); ++k) {
        const auto& pr = labels.pairs[k];
        const auto lookup = [&](std::uint32_t idx) {
            auto it = column.find(labels.patient_ids.at(idx));
            if (it == column.end()) {
                throw LookupError("precontext loss: patient '" + labels.patient_ids.at(idx) +
                                  "' missing from feature table");
            }
            return it->second;
        };
        first.push_back(lookup(pr.anchor));
        second.push_back(lookup(pr.other));
        y(0, static_cast<Eigen::Index>(k)) = pr.label;
    }
    ad::Tape tape;
    ad::Var loss = similarity_loss(tape, tape.constant(table.features), first, second, y, params);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw NumericError("precontext", "non-finite similarity loss");
    return value;
}

CohortAssignment::CohortAssignment(std::vector<std::string> ids, const std::vector<int>& labels)
    : ids_(std::move(ids)) {
    if (ids_.size() != labels.size()) {
        throw ValidationError("cohort assignment: ids and labels differ in length");
    }
    std::map<int, int> relabel;
    labels_.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = relabel.emplace(labels[i], static_cast<int>(relabel.size()));
        labels_.push_back(it->second);
        if (!index_.emplace(ids_[i], i).second) {
            throw ValidationError("cohort assignment: duplicate id '" + ids_[i] + "'");
        }
    }
    n_cohorts_ = static_cast<int>(relabel.size());
    members_.assign(static_cast<std::size_t>(n_cohorts_), {});
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        members_[static_cast<std::size_t>(labels_[i])].push_back(i);
    }
}

int CohortAssignment::cohort_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw LookupError("cohort assignment: unknown id '" + id + "'");
    return labels_[it->second];
}

void save_cohorts_csv(const CohortAssignment& cohorts, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write cohort file " + path.string());
    out << "patient_id,cohort_index\n";
    for (std::size_t i = 0; i < cohorts.ids().size(); ++i) {
        out << csv::quote(cohorts.ids()[i]) << ',' << cohorts.labels()[i] << '\n';
    }
}

CohortAssignment load_cohorts_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open cohort file " + path.string());
    std::vector<std::string> ids;
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = csv::split_line(line, lineno);
        if (lineno == 1 && !f.empty() && f[0] == "patient_id") continue;
        if (f.size() != 2) throw ParseError("expected patient_id,cohort_index", lineno);
        try {
            labels.push_back(std::stoi(f[1]));
        } catch (const std::exception&) {
            throw ParseError("bad cohort index '" + f[1] + "'", lineno);
        }
        ids.push_back(f[0]);
    }
    return CohortAssignment(std::move(ids), labels);
}

std::vector<int> agglomerative_average(const ad::Mat& points, int n_clusters,
                                       const std::vector<std::size_t>& rank) {
    const auto n = static_cast<std::size_t>(points.cols());
    if (n_clusters < 1 || static_cast<std::size_t>(n_clusters) > n) {
        throw ValidationError("agglomerative clustering: n_clusters out of range");
    }
    if (rank.size() != n) throw ValidationError("agglomerative clustering: rank size mismatch");

    // Pairwise Euclidean distances via the Gram matrix, clamped at zero.
    const Eigen::VectorXd sq = points.colwise().squaredNorm().transpose();
    Eigen::MatrixXd dist = -2.0 * (points.transpose() * points);
    dist.colwise() += sq;
    dist.rowwise() += sq.transpose();
    dist = dist.cwiseMax(0.0).cwiseSqrt();
    for (std::size_t i = 0; i < n; ++i) dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 0.0;

    std::vector<std::size_t> size(n, 1);
    std::vector<std::size_t> min_rank(rank);
    std::vector<char> active(n, 1);
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);

    using Key = std::tuple<double, std::size_t, std::size_t>;
    const auto key = [&](std::size_t a, std::size_t b) {
        const auto ra = min_rank[a], rb = min_rank[b];
        return Key{dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)), std::min(ra, rb),
                   std::max(ra, rb)};
    };
    const std::size_t none = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> nearest(n, none);
    const auto refresh = [&](std::size_t a) {
        nearest[a] = none;
        for (std::size_t b = 0; b < n; ++b) {
            if (b == a || !active[b]) continue;
            if (nearest[a] == none || key(a, b) < key(a, nearest[a])) nearest[a] = b;
        }
    };
    for (std::size_t a = 0; a < n; ++a) refresh(a);

    std::size_t clusters = n;
    while (clusters > static_cast<std::size_t>(n_clusters)) {
        std::size_t best = none;
        for (std::size_t a = 0; a < n; ++a) {
            if (!active[a] || nearest[a] == none) continue;
            if (best == none || key(a, nearest[a]) < key(best, nearest[best])) best = a;
        }
        std::size_t keep = best;
        std::size_t gone = nearest[best];
        if (min_rank[gone] < min_rank[keep]) std::swap(keep, gone);

        const double wk = static_cast<double>(size[keep]);
        const double wg = static_cast<double>(size[gone]);
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == keep || k == gone) continue;
            const auto ik = static_cast<Eigen::Index>(k);
            const double merged = (wk * dist(static_cast<Eigen::Index>(keep), ik) +
                                   wg * dist(static_cast<Eigen::Index>(gone), ik)) /
                                  (wk + wg);
            dist(static_cast<Eigen::Index>(keep), ik) = merged;
            dist(ik, static_cast<Eigen::Index>(keep)) = merged;
        }
        size[keep] += size[gone];
        min_rank[keep] = std::min(min_rank[keep], min_rank[gone]);
        active[gone] = 0;
        parent[gone] = keep;
        --clusters;

        refresh(keep);
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == keep) continue;
            if (nearest[k] == keep || nearest[k] == gone) {
                refresh(k);
            } else if (key(k, keep) < key(k, nearest[k])) {
                nearest[k] = keep;
            }
        }
    }

    const auto root = [&](std::size_t a) {
        while (parent[a] != a) a = parent[a];
        return a;
    };
    // Number clusters by their smallest rank.
    std::vector<std::pair<std::size_t, std::size_t>> roots;
    for (std::size_t a = 0; a < n; ++a) {
        if (active[a]) roots.emplace_back(min_rank[a], a);
    }
    std::sort(roots.begin(), roots.end());
    std::vector<int> label_of_root(n, -1);
    for (std::size_t k = 0; k < roots.size(); ++k) label_of_root[roots[k].second] = static_cast<int>(k);
    std::vector<int> labels(n);
    for (std::size_t a = 0; a < n; ++a) labels[a] = label_of_root[root(a)];
    return labels;
}

CohortAssignment cluster_patients(const PatientFeatureTable& table, int n_cohorts) {
    const std::size_t n = table.size();
    if (n_cohorts < 2 || static_cast<std::size_t>(n_cohorts) > n) {
        throw ValidationError("cluster_patients: n_cohorts must lie in [2, " + std::to_string(n) + "]");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return table.patient_ids[a] < table.patient_ids[b]; });
    std::vector<std::size_t> rank(n);
    for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;
    const auto labels = agglomerative_average(table.features, n_cohorts, rank);
    return CohortAssignment(table.patient_ids, labels);
}

}  // namespace cohort
