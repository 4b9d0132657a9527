#include "cohort/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cohort/backbones.hpp"
#include "cohort/baselines.hpp"
#include "cohort/cohort_model.hpp"
#include "cohort/csv.hpp"
#include "cohort/errors.hpp"
#include "cohort/nn.hpp"
#include "cohort/ontology_embeddings.hpp"
#include "cohort/visit_encoder.hpp"

namespace cohort {

namespace fs = std::filesystem;
using ad::Mat;
using ad::Tape;
using ad::Var;
using json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kEvalChunk = 512;

Mat take_cols(const Mat& m, const std::vector<std::size_t>& idx) {
    Mat out(m.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
        out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(idx[j]));
    }
    return out;
}

/// Root with every observed diagnosis code as a direct child.
std::shared_ptr<const OntologyTree> flat_ontology(const Dataset& ds) {
    std::vector<OntologyRow> rows{{"ALL", OntologyTree::kRootSentinel, "all diagnoses"}};
    for (const auto& id : ds.vocab(CodeKind::diagnosis).ids()) rows.push_back({id, "ALL", id});
    return std::make_shared<const OntologyTree>(OntologyTree::from_rows(rows));
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

json metrics_json(const MetricsReport& m) {
    return json{{"auprc", m.auprc},         {"accuracy", m.accuracy}, {"precision", m.precision},
                {"recall", m.recall},       {"f1", m.f1},             {"threshold", m.threshold},
                {"n_samples", m.n_samples}};
}

struct Embeddings {
    NodeEmbeddingTable nodes;
    SemanticVocab words;
};

Embeddings train_embeddings(const OntologyTree& tree, const RunConfig& cfg) {
    NodeEmbeddingOptions nopt;
    nopt.dim = cfg.node_dim;
    nopt.walks_per_node = cfg.node_walks;
    nopt.walk_length = cfg.node_walk_length;
    nopt.seed = cfg.seed;
    SemanticOptions sopt;
    sopt.dim = cfg.word_dim;
    sopt.epochs = cfg.word_epochs;
    sopt.seed = cfg.seed;
    std::vector<std::vector<std::string>> corpus;
    for (const auto& [id, _] : tree.nodes()) {
        if (id == tree.root_id()) continue;
        auto s = code_sentence(id, tree);
        if (!s.empty()) corpus.push_back(std::move(s));
    }
    Embeddings e;
    e.nodes = train_node_embeddings(tree, nopt);
    e.words = corpus.empty() ? SemanticVocab{cfg.word_dim, {}} : train_semantic_vectors(corpus, sopt);
    return e;
}

// Role flags derived from method and ablation.
struct Roles {
    bool precontext = false;   // learns F^p through the similarity task
    bool core_cohorts = false; // cohorts from clustering (core family)
    bool medical = false;
    bool intra = false;
    bool inter = false;
    bool knn = false;
    bool kmeans = false;
    bool grasp = false;
};

Roles roles_for(const RunConfig& c) {
    Roles r;
    if (c.method == "core") {
        r.core_cohorts = true;
        r.precontext = c.ablation != "no_precontext";
        r.intra = c.ablation != "no_intra";
        r.inter = c.ablation != "no_inter";
    } else if (c.method.rfind("mc_", 0) == 0) {
        r.medical = r.precontext = r.intra = r.inter = true;
    } else if (c.method == "knn") {
        r.knn = true;
    } else if (c.method == "kmeans") {
        r.kmeans = true;
    } else if (c.method == "grasp_lite") {
        r.grasp = r.inter = true;
    }
    return r;
}

class Pipeline {
   public:
    Pipeline(const RunConfig& cfg, PreparedData data, Embeddings emb)
        : cfg_(cfg), data_(std::move(data)), emb_(std::move(emb)), roles_(roles_for(cfg)) {
        const Dataset& ds = data_.dataset;
        const int d = cfg.d;
        dx_table_ = DiagnosisInputTable(ds.vocab(CodeKind::diagnosis), *ds.ontology, emb_.nodes, emb_.words);

        // Samples: every visit, patients in dataset order.
        patient_samples_.resize(ds.patients.size());
        for (std::size_t p = 0; p < ds.patients.size(); ++p) {
            const auto& pat = ds.patients[p];
            for (std::size_t v = 0; v < pat.visits.size(); ++v) {
                patient_samples_[p].push_back(refs_.size());
                refs_.push_back({&pat, v});
                sample_patient_.push_back(p);
                labels_.push_back(pat.visits[v].readmit_label.value_or(0));
                sample_ids_.push_back(pat.patient_id + "/" + pat.visits[v].visit_id);
            }
        }
        std::vector<const CodeSet*> dx, rx, lab;
        for (const auto& r : refs_) {
            const auto& v = r.patient->visits[r.visit];
            dx.push_back(&v.diagnosis_codes);
            rx.push_back(&v.medication_codes);
            lab.push_back(&v.lab_codes);
        }
        dx_inputs_ = dx_table_.mean_inputs(dx);
        med_mh_ = multihot_batch(rx, ds.vocab(CodeKind::medication).size());
        lab_mh_ = multihot_batch(lab, ds.vocab(CodeKind::lab).size());
        for (int s = 0; s < 3; ++s) {
            for (auto p : data_.split[static_cast<std::size_t>(s)]) {
                for (auto i : patient_samples_[p]) split_samples_[static_cast<std::size_t>(s)].push_back(i);
            }
            std::sort(split_samples_[static_cast<std::size_t>(s)].begin(),
                      split_samples_[static_cast<std::size_t>(s)].end());
        }

        Rng r_hier = Rng::derive(cfg.seed, "init-hier");
        Rng r_visit = Rng::derive(cfg.seed, "init-visit");
        Rng r_pre = Rng::derive(cfg.seed, "init-pre");
        Rng r_gcn = Rng::derive(cfg.seed, "init-gcn");
        Rng r_fusion = Rng::derive(cfg.seed, "init-fusion");
        hier_ = HierEmbedParams(d, dx_table_.width(), r_hier);
        visit_ = VisitEncoderParams(d, static_cast<int>(ds.vocab(CodeKind::medication).size()),
                                    static_cast<int>(ds.vocab(CodeKind::lab).size()), d, r_visit);
        visit_.tanh_visit = cfg.tanh_visit;
        pre_ = PatientEncoderParams(d, r_pre);
        gcn_ = GCNParams(d, r_gcn, cfg.gcn_zero_init);
        fusion_ = FusionParams(d, r_fusion);
        BackboneSpec spec;
        spec.dim = d;
        spec.native_dim = cfg.backbone_native_dim;
        spec.seed = cfg.seed;
        for (std::size_t k = 0; k < kNumCodeKinds; ++k) spec.vocab_sizes[k] = ds.vocabularies[k].size();
        backbone_ = make_backbone(cfg.backbone, spec);

        nn::Adam::Options opt;
        opt.lr = cfg.learning_rate;
        adam_pre_ = nn::Adam(opt);
        adam_down_ = nn::Adam(opt);
    }

    std::vector<ad::Param*> pre_params() {
        std::vector<ad::Param*> out;
        for (auto* p : hier_.parameters()) out.push_back(p);
        for (auto* p : visit_.parameters()) out.push_back(p);
        for (auto* p : pre_.parameters()) out.push_back(p);
        return out;
    }

    std::vector<ad::Param*> down_params() {
        auto out = backbone_->parameters();
        for (auto* p : gcn_.parameters()) out.push_back(p);
        for (auto* p : fusion_.parameters()) out.push_back(p);
        return out;
    }

    std::vector<ad::Param*> all_params() {
        auto out = pre_params();
        for (auto* p : down_params()) out.push_back(p);
        return out;
    }

    // ---- pre-context -------------------------------------------------

    Var visit_features(Tape& tape, const std::vector<std::size_t>& samples) const {
        Var f_D = hierarchical_embed(tape, take_cols(dx_inputs_, samples), hier_);
        return encode_visits(tape, take_cols(med_mh_, samples), take_cols(lab_mh_, samples), f_D, visit_);
    }

    Var pair_loss(Tape& tape, std::size_t begin, std::size_t end) const {
        std::vector<int> local(data_.dataset.patients.size(), -1);
        std::vector<std::size_t> samples;
        std::vector<std::vector<int>> cols;
        const auto place = [&](std::size_t p) {
            if (local[p] < 0) {
                local[p] = static_cast<int>(cols.size());
                std::vector<int> c;
                for (auto s : patient_samples_[p]) {
                    c.push_back(static_cast<int>(samples.size()));
                    samples.push_back(s);
                }
                cols.push_back(std::move(c));
            }
            return local[p];
        };
        std::vector<int> first, second;
        Mat y(1, static_cast<Eigen::Index>(end - begin));
        for (std::size_t k = begin; k < end; ++k) {
            const auto& pr = labels_set_.pairs[pair_order_[k]];
            first.push_back(place(pr.anchor));
            second.push_back(place(pr.other));
            y(0, static_cast<Eigen::Index>(k - begin)) = pr.label;
        }
        Var v = visit_features(tape, samples);
        auto enc = encode_patients(tape, v, cols, pre_);
        return similarity_loss(tape, enc.features, first, second, y, pre_);
    }

    void ensure_pairs() {
        if (!labels_set_.pairs.empty()) return;
        labels_set_ = build_similarity_labels(data_.dataset, cfg_.pos_k, cfg_.neg_k, cfg_.seed);
        pair_order_.resize(labels_set_.pairs.size());
        std::iota(pair_order_.begin(), pair_order_.end(), 0);
    }

    double warmup() {
        if (!roles_.precontext || cfg_.warmup_epochs == 0) return 0.0;
        ensure_pairs();
        const std::size_t step = static_cast<std::size_t>(cfg_.batch_size) *
                                 static_cast<std::size_t>(cfg_.pos_k + cfg_.neg_k);
        auto params = pre_params();
        double last = 0.0;
        for (int e = 0; e < cfg_.warmup_epochs; ++e) {
            pair_rng_.shuffle(pair_order_);
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t b = 0; b < pair_order_.size(); b += step) {
                Tape tape;
                Var loss = pair_loss(tape, b, std::min(b + step, pair_order_.size()));
                const double value = loss.value()(0, 0);
                if (!std::isfinite(value)) throw NumericError("precontext", "non-finite similarity loss in warmup");
                nn::zero_grad(params);
                tape.backward(loss);
                adam_pre_.step(params);
                sum += value;
                ++n;
            }
            last = sum / static_cast<double>(std::max<std::size_t>(n, 1));
        }
        return last;
    }

    /// F(v) for every sample and F^p for every patient.
    void compute_patient_features() {
        {
            std::vector<std::size_t> all(refs_.size());
            std::iota(all.begin(), all.end(), 0);
            Tape tape;
            visit_feats_ = visit_features(tape, all).value();
        }
        const auto n_pat = patient_samples_.size();
        patient_feats_.resize(cfg_.d, static_cast<Eigen::Index>(n_pat));
        for (std::size_t b = 0; b < n_pat; b += kEvalChunk) {
            const std::size_t e = std::min(b + kEvalChunk, n_pat);
            std::vector<std::vector<int>> cols;
            for (std::size_t p = b; p < e; ++p) {
                std::vector<int> c;
                for (auto s : patient_samples_[p]) c.push_back(static_cast<int>(s));
                cols.push_back(std::move(c));
            }
            Tape tape;
            auto enc = encode_patients(tape, tape.constant(visit_feats_), cols, pre_);
            patient_feats_.middleCols(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) =
                enc.features.value();
        }
        if (!patient_feats_.allFinite()) throw NumericError("precontext", "non-finite patient features");
    }

    PatientFeatureTable feature_table(const Mat& features) const {
        PatientFeatureTable t;
        t.dim = static_cast<int>(features.rows());
        for (const auto& p : data_.dataset.patients) t.patient_ids.push_back(p.patient_id);
        t.features = features;
        return t;
    }

    double planted_ari(const CohortAssignment& patient_cohorts) const {
        if (data_.planted.empty() || patient_cohorts.ids().size() != data_.dataset.patients.size()) return -1.0;
        std::vector<int> truth;
        for (const auto& p : data_.dataset.patients) truth.push_back(data_.planted.at(p.patient_id));
        return adjusted_rand_index(patient_cohorts.labels(), truth);
    }

    // ---- structures refreshed once per epoch ---------------------------

    void refresh() {
        const auto n = refs_.size();
        R_cache_.resize(cfg_.d, static_cast<Eigen::Index>(n));
        for (std::size_t b = 0; b < n; b += kEvalChunk) {
            const std::size_t e = std::min(b + kEvalChunk, n);
            std::vector<SampleRef> batch(refs_.begin() + static_cast<std::ptrdiff_t>(b),
                                         refs_.begin() + static_cast<std::ptrdiff_t>(e));
            Tape tape;
            R_cache_.middleCols(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) =
                backbone_->encode(tape, batch).value();
        }
        if (!R_cache_.allFinite()) throw NumericError("backbone", "non-finite initial representations");

        sample_cohort_.assign(n, 0);
        n_cohorts_eff_ = 0;
        has_patient_cohorts_ = false;
        Mat sim;  // similarity feature per sample
        if (roles_.core_cohorts || roles_.medical) {
            Mat patient_space;
            if (roles_.precontext) {
                compute_patient_features();
                patient_space = patient_feats_;
            } else {
                patient_space = Mat::Zero(cfg_.d, static_cast<Eigen::Index>(patient_samples_.size()));
                for (std::size_t p = 0; p < patient_samples_.size(); ++p) {
                    for (auto s : patient_samples_[p]) patient_space.col(static_cast<Eigen::Index>(p)) += R_cache_.col(static_cast<Eigen::Index>(s));
                    patient_space.col(static_cast<Eigen::Index>(p)) /= static_cast<double>(patient_samples_[p].size());
                }
            }
            sim.resize(cfg_.d, static_cast<Eigen::Index>(n));
            for (std::size_t i = 0; i < n; ++i) sim.col(static_cast<Eigen::Index>(i)) = patient_space.col(static_cast<Eigen::Index>(sample_patient_[i]));

            if (roles_.medical) {
                std::vector<Demographics> demo;
                for (const auto& p : data_.dataset.patients) demo.push_back(p.demographics);
                cohorts_ = CohortAssignment(feature_table(patient_space).patient_ids,
                                            medical_cohorts(demo, parse_medical_mode(cfg_.method)));
                has_patient_cohorts_ = true;
            } else if (cfg_.visit_level_cohorts) {
                const Mat& space = roles_.precontext ? visit_feats_ : R_cache_;
                std::vector<std::size_t> rank(n);
                std::iota(rank.begin(), rank.end(), 0);
                if (static_cast<std::size_t>(cfg_.n_cohorts) > n) throw ValidationError("n_cohorts exceeds sample count");
                cohorts_ = CohortAssignment(sample_ids_, agglomerative_average(space, cfg_.n_cohorts, rank));
                sim = space;
            } else {
                if (static_cast<std::size_t>(cfg_.n_cohorts) > patient_samples_.size()) {
                    throw ValidationError("n_cohorts exceeds patient count");
                }
                cohorts_ = cluster_patients(feature_table(patient_space), cfg_.n_cohorts);
                has_patient_cohorts_ = true;
            }
            for (std::size_t i = 0; i < n; ++i) {
                sample_cohort_[i] = has_patient_cohorts_ ? cohorts_.cohort_of(sample_patient_[i]) : cohorts_.cohort_of(i);
            }
            n_cohorts_eff_ = cohorts_.n_cohorts();
        } else if (roles_.kmeans || roles_.grasp) {
            const auto km = kmeans(R_cache_, std::min<int>(cfg_.n_cohorts, static_cast<int>(n)), cfg_.seed);
            cohorts_ = CohortAssignment(sample_ids_, km.labels);
            for (std::size_t i = 0; i < n; ++i) sample_cohort_[i] = cohorts_.cohort_of(i);
            n_cohorts_eff_ = cohorts_.n_cohorts();
        }

        // Neighbor sums over cached representations (gradient stops here).
        nb_sum_ = Mat::Zero(cfg_.d, static_cast<Eigen::Index>(n));
        nb_count_.assign(n, 0);
        std::vector<std::vector<std::size_t>> nbrs;
        if (roles_.intra) {
            std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n_cohorts_eff_));
            for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(sample_cohort_[i])].push_back(i);
            nbrs.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                nbrs[i] = select_neighbors(i, members[static_cast<std::size_t>(sample_cohort_[i])], sim, cfg_.gamma,
                                           cfg_.K, sample_patient_)
                              .neighbors;
            }
        } else if (roles_.knn) {
            nbrs = knn_neighbors(R_cache_, std::min<int>(cfg_.K, static_cast<int>(n) - 1), sample_patient_);
        } else if (roles_.kmeans) {
            nbrs = cluster_neighbors(cohorts_.labels(), cfg_.K, cfg_.seed, sample_patient_);
        }
        for (std::size_t i = 0; i < nbrs.size(); ++i) {
            for (auto j : nbrs[i]) nb_sum_.col(static_cast<Eigen::Index>(i)) += R_cache_.col(static_cast<Eigen::Index>(j));
            nb_count_[i] = nbrs[i].size();
        }

        has_graph_ = roles_.inter && n_cohorts_eff_ > 0;
        if (has_graph_) {
            graph_ = build_inter_graph(sample_cohort_, n_cohorts_eff_, R_cache_, std::min(cfg_.S, n_cohorts_eff_ - 1));
        }
    }

    // ---- downstream forward --------------------------------------------

    struct Forward {
        Var R_ini, logits, attention;
    };

    Forward forward(Tape& tape, const std::vector<std::size_t>& idx) const {
        std::vector<SampleRef> batch;
        for (auto i : idx) batch.push_back(refs_[i]);
        Forward f;
        f.R_ini = backbone_->encode(tape, batch);
        Var R_final = f.R_ini;
        const auto b = static_cast<Eigen::Index>(idx.size());
        const auto mean_with_cached = [&]() {
            Mat inv(1, b);
            for (Eigen::Index j = 0; j < b; ++j) inv(0, j) = 1.0 / static_cast<double>(nb_count_[idx[static_cast<std::size_t>(j)]] + 1);
            return ad::scale_cols(ad::add(f.R_ini, tape.constant(take_cols(nb_sum_, idx))), tape.constant(inv));
        };
        const auto inter_rows = [&]() {
            std::vector<int> c;
            for (auto i : idx) c.push_back(sample_cohort_[i]);
            return ad::gather_cols(gcn_forward(tape, graph_, gcn_), c);
        };
        if (roles_.knn || roles_.kmeans) {
            R_final = mean_with_cached();
        } else if (roles_.grasp) {
            if (has_graph_) R_final = ad::add(f.R_ini, inter_rows());
        } else if (roles_.core_cohorts || roles_.medical) {
            Mat mask = Mat::Zero(2, b);
            for (Eigen::Index j = 0; j < b; ++j) {
                mask(0, j) = roles_.intra && nb_count_[idx[static_cast<std::size_t>(j)]] > 0 ? 1.0 : 0.0;
                mask(1, j) = has_graph_ ? 1.0 : 0.0;
            }
            Var R_intra = roles_.intra ? mean_with_cached() : tape.constant(Mat::Zero(cfg_.d, b));
            Var R_inter = has_graph_ ? inter_rows() : tape.constant(Mat::Zero(cfg_.d, b));
            auto fused = fuse(tape, f.R_ini, R_intra, R_inter, mask, fusion_);
            R_final = fused.R_final;
            f.attention = fused.attention;
        }
        f.logits = classifier_logits(tape, R_final, fusion_);
        return f;
    }

    std::vector<double> scores(const std::vector<std::size_t>& idx, Mat* attention = nullptr) const {
        std::vector<double> out;
        if (attention) attention->resize(2, static_cast<Eigen::Index>(idx.size()));
        for (std::size_t b = 0; b < idx.size(); b += kEvalChunk) {
            const std::size_t e = std::min(b + kEvalChunk, idx.size());
            std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(b),
                                           idx.begin() + static_cast<std::ptrdiff_t>(e));
            Tape tape;
            auto f = forward(tape, chunk);
            for (Eigen::Index j = 0; j < f.logits.cols(); ++j) out.push_back(sigmoid(f.logits.value()(0, j)));
            if (attention) {
                attention->middleCols(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) =
                    f.attention.valid() ? f.attention.value() : Mat::Zero(2, static_cast<Eigen::Index>(e - b));
            }
        }
        for (double s : out) {
            if (!std::isfinite(s)) throw NumericError("cohort_model", "non-finite prediction");
        }
        return out;
    }

    MetricsReport evaluate(int split) const {
        const auto& idx = split_samples_.at(static_cast<std::size_t>(split));
        if (idx.empty()) throw ValidationError("evaluation split is empty");
        std::vector<int> y;
        for (auto i : idx) y.push_back(labels_[i]);
        return compute_metrics(scores(idx), y, cfg_.threshold);
    }

    EpochRecord train_epoch(int epoch) {
        std::vector<std::size_t> order = split_samples_[0];
        if (order.empty()) throw ValidationError("training split is empty");
        batch_rng_.shuffle(order);
        const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
        const std::size_t n_batches = (order.size() + bs - 1) / bs;
        const bool train_pre = roles_.precontext && cfg_.lambda_pre > 0.0;
        if (train_pre) {
            ensure_pairs();
            pair_rng_.shuffle(pair_order_);
        }
        auto down = down_params();
        auto pre = pre_params();
        EpochRecord rec;
        rec.epoch = epoch;
        double down_sum = 0.0, pre_sum = 0.0;
        for (std::size_t k = 0; k < n_batches; ++k) {
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(k * bs),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), (k + 1) * bs)));
            Mat y(1, static_cast<Eigen::Index>(idx.size()));
            for (std::size_t j = 0; j < idx.size(); ++j) y(0, static_cast<Eigen::Index>(j)) = labels_[idx[j]];
            Tape tape;
            auto f = forward(tape, idx);
            Var pre_loss;
            if (train_pre) {
                const std::size_t per = (pair_order_.size() + n_batches - 1) / n_batches;
                const std::size_t b = std::min(pair_order_.size(), k * per);
                const std::size_t e = std::min(pair_order_.size(), b + per);
                if (e > b) pre_loss = pair_loss(tape, b, e);
            }
            Var loss = total_loss(f.logits, y, pre_loss, train_pre ? cfg_.lambda_pre : 0.0);
            const double value = loss.value()(0, 0);
            if (!std::isfinite(value)) {
                if (pre_loss.valid() && !std::isfinite(pre_loss.value()(0, 0))) {
                    throw NumericError("precontext", "non-finite similarity loss at epoch " + std::to_string(epoch));
                }
                if (!f.R_ini.value().allFinite()) {
                    throw NumericError("backbone", "non-finite representations at epoch " + std::to_string(epoch));
                }
                throw NumericError("cohort_model", "non-finite downstream loss at epoch " + std::to_string(epoch));
            }
            nn::zero_grad(down);
            nn::zero_grad(pre);
            tape.backward(loss);
            adam_down_.step(down);
            if (pre_loss.valid()) {
                adam_pre_.step(pre);
                pre_sum += pre_loss.value()(0, 0);
            }
            down_sum += value - (pre_loss.valid() ? cfg_.lambda_pre * pre_loss.value()(0, 0) : 0.0);
        }
        rec.train_loss = down_sum / static_cast<double>(n_batches);
        rec.pre_loss = pre_sum / static_cast<double>(n_batches);
        return rec;
    }

    std::vector<Mat> snapshot() {
        std::vector<Mat> out;
        for (auto* p : all_params()) out.push_back(p->value);
        return out;
    }

    void restore(const std::vector<Mat>& snap) {
        auto ps = all_params();
        for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = snap[i];
    }

    json params_json() {
        json out = json::object();
        for (auto* p : all_params()) {
            json data = json::array();
            for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
                for (Eigen::Index r = 0; r < p->value.rows(); ++r) data.push_back(p->value(r, c));
            }
            out[p->name] = json{{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", data}};
        }
        return out;
    }

    void load_params(const json& j) {
        for (auto* p : all_params()) {
            if (!j.contains(p->name)) throw ParseError("checkpoint lacks parameter '" + p->name + "'");
            const auto& e = j.at(p->name);
            if (e.at("rows").get<Eigen::Index>() != p->value.rows() || e.at("cols").get<Eigen::Index>() != p->value.cols()) {
                throw ParseError("checkpoint parameter '" + p->name + "' has the wrong shape");
            }
            const auto& data = e.at("data");
            Eigen::Index k = 0;
            for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
                for (Eigen::Index r = 0; r < p->value.rows(); ++r) p->value(r, c) = data.at(static_cast<std::size_t>(k++)).get<double>();
            }
        }
    }

    void write_dumps(const fs::path& dir) const {
        if (n_cohorts_eff_ > 0) {
            if (has_patient_cohorts_ || !cohorts_.ids().empty()) save_cohorts_csv(cohorts_, dir / "cohorts.csv");
        }
        if (has_graph_) save_inter_graph_csv(graph_, dir / "inter_graph.csv");
        if (roles_.core_cohorts || roles_.medical) {
            std::vector<std::size_t> all(refs_.size());
            std::iota(all.begin(), all.end(), 0);
            Mat att;
            scores(all, &att);
            std::vector<AttentionRow> rows;
            for (std::size_t i = 0; i < all.size(); ++i) {
                rows.push_back({sample_ids_[i], att(0, static_cast<Eigen::Index>(i)), att(1, static_cast<Eigen::Index>(i))});
            }
            save_attention_csv(rows, dir / "attention.csv");
        }
    }

    const Mat& patient_features() const { return patient_feats_; }
    const Embeddings& embeddings() const { return emb_; }
    const CohortAssignment& cohorts() const { return cohorts_; }
    bool has_patient_cohorts() const { return has_patient_cohorts_; }
    int n_cohorts() const { return n_cohorts_eff_; }
    const PreparedData& data() const { return data_; }
    void set_optimizer_steps(long pre, long down) {
        adam_pre_.set_steps(pre);
        adam_down_.set_steps(down);
    }

   private:
    RunConfig cfg_;
    PreparedData data_;
    Embeddings emb_;
    Roles roles_;
    DiagnosisInputTable dx_table_;

    std::vector<SampleRef> refs_;
    std::vector<std::size_t> sample_patient_;
    std::vector<int> labels_;
    std::vector<std::string> sample_ids_;
    std::vector<std::vector<std::size_t>> patient_samples_;
    std::array<std::vector<std::size_t>, 3> split_samples_;
    Mat dx_inputs_, med_mh_, lab_mh_;

    HierEmbedParams hier_;
    VisitEncoderParams visit_;
    PatientEncoderParams pre_;
    GCNParams gcn_;
    FusionParams fusion_;
    std::unique_ptr<Backbone> backbone_;
    nn::Adam adam_pre_, adam_down_;

    SimilarityLabelSet labels_set_;
    std::vector<std::size_t> pair_order_;
    Rng pair_rng_ = Rng::derive(cfg_.seed, "pair-order");
    Rng batch_rng_ = Rng::derive(cfg_.seed, "batch-order");

    Mat R_cache_, visit_feats_, patient_feats_, nb_sum_;
    std::vector<std::size_t> nb_count_;
    std::vector<int> sample_cohort_;
    int n_cohorts_eff_ = 0;
    bool has_patient_cohorts_ = false;
    CohortAssignment cohorts_;
    bool has_graph_ = false;
    InterCohortGraph graph_;
};

json history_json(const std::vector<EpochRecord>& history) {
    json out = json::array();
    for (const auto& h : history) {
        out.push_back(json{{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"pre_loss", h.pre_loss},
                           {"val_auprc", h.val_auprc}});
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path.string());
    out << text;
}

}  // namespace

PreparedData prepare_data(const RunConfig& cfg) {
    validate_config(cfg);
    PreparedData out;
    if (cfg.data_path.empty()) {
        SyntheticSpec spec = cfg.synthetic;
        spec.seed = cfg.seed;
        if (spec.readmit_cohort_shift.empty() && cfg.readmit_shift_spread > 0.0) {
            spec.readmit_cohort_shift = spread_shifts(spec.n_planted_cohorts, cfg.readmit_shift_spread);
        }
        auto syn = generate_synthetic(spec);
        out.dataset = derive_readmission_labels(syn.dataset, cfg.readmit_window);
        out.dataset.ontology = syn.ontology;
        out.planted = std::move(syn.planted);
    } else {
        Dataset ds = load_patients(cfg.data_path);
        std::shared_ptr<const OntologyTree> tree =
            cfg.ontology_path.empty() ? flat_ontology(ds)
                                      : std::make_shared<const OntologyTree>(load_ontology_csv(cfg.ontology_path));
        for (const auto& id : ds.vocab(CodeKind::diagnosis).ids()) {
            if (!tree->contains(id)) throw ValidationError("diagnosis code '" + id + "' missing from the ontology");
        }
        out.dataset = derive_readmission_labels(ds, cfg.readmit_window);
        out.dataset.ontology = tree;
    }
    const auto parts = split_dataset(out.dataset, cfg.split, cfg.seed);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < out.dataset.patients.size(); ++i) index[out.dataset.patients[i].patient_id] = i;
    const Dataset* sets[3] = {&parts.train, &parts.val, &parts.test};
    for (std::size_t s = 0; s < 3; ++s) {
        for (const auto& p : sets[s]->patients) out.split[s].push_back(index.at(p.patient_id));
        std::sort(out.split[s].begin(), out.split[s].end());
    }
    return out;
}

TrainResult run_train(const RunConfig& cfg) {
    PreparedData data = prepare_data(cfg);
    Embeddings emb = train_embeddings(*data.dataset.ontology, cfg);
    Pipeline pipe(cfg, std::move(data), std::move(emb));

    TrainResult res;
    res.config_hash = config_hash(cfg);
    pipe.warmup();
    pipe.refresh();
    double best = -1.0;
    std::vector<Mat> best_params = pipe.snapshot();
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord rec = pipe.train_epoch(epoch);
        pipe.refresh();
        rec.val_auprc = pipe.evaluate(1).auprc;
        res.history.push_back(rec);
        if (rec.val_auprc > best) {
            best = rec.val_auprc;
            res.best_epoch = epoch;
            best_params = pipe.snapshot();
        }
    }
    pipe.restore(best_params);
    pipe.refresh();
    res.val = pipe.evaluate(1);
    res.test = pipe.evaluate(2);
    res.n_cohorts = pipe.n_cohorts();
    if (pipe.has_patient_cohorts() && cfg.method == "core") res.cohort_ari = pipe.planted_ari(pipe.cohorts());

    if (!cfg.out_dir.empty()) {
        const fs::path out(cfg.out_dir);
        fs::create_directories(out / "checkpoint");
        fs::create_directories(out / "curves");
        write_text(out / "report.json", report_json(cfg, res));
        pipe.write_dumps(out);

        json ck;
        ck["config"] = canonical_config(cfg);
        ck["config_hash"] = res.config_hash;
        ck["best_epoch"] = res.best_epoch;
        ck["history"] = history_json(res.history);
        ck["params"] = pipe.params_json();
        write_text(out / "checkpoint" / "model.json", ck.dump());
        save_embedding_table(pipe.embeddings().nodes.vectors, pipe.embeddings().nodes.dim,
                             out / "checkpoint" / "nodes.emb");
        save_embedding_table(pipe.embeddings().words.word_vectors, pipe.embeddings().words.dim,
                             out / "checkpoint" / "words.emb");
        if (pipe.n_cohorts() > 0) save_cohorts_csv(pipe.cohorts(), out / "checkpoint" / "cohorts.csv");

        std::vector<std::string> xs;
        std::vector<double> ys;
        for (const auto& h : res.history) {
            xs.push_back(std::to_string(h.epoch));
            ys.push_back(h.val_auprc);
        }
        write_line_chart_svg(out / "curves" / "val_auprc.svg", "validation AUPRC by epoch", "epoch", xs, ys);
    }
    return res;
}

MetricsReport run_eval(const fs::path& checkpoint_dir, const std::string& split) {
    fs::path dir = checkpoint_dir;
    if (!fs::exists(dir / "model.json") && fs::exists(dir / "checkpoint" / "model.json")) dir /= "checkpoint";
    std::ifstream in(dir / "model.json");
    if (!in) throw ConfigError("no checkpoint at " + checkpoint_dir.string());
    json ck;
    try {
        ck = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint: ") + e.what());
    }
    RunConfig cfg = parse_config(ck.at("config").get<std::string>());
    int split_index = split == "val" ? 1 : split == "test" ? 2 : split == "train" ? 0 : -1;
    if (split_index < 0) throw ConfigError("unknown split '" + split + "'");

    PreparedData data = prepare_data(cfg);
    Embeddings emb;
    emb.nodes.vectors = load_embedding_table(dir / "nodes.emb", &emb.nodes.dim);
    emb.words.word_vectors = load_embedding_table(dir / "words.emb", &emb.words.dim);
    if (emb.words.dim == 0) emb.words.dim = cfg.word_dim;
    Pipeline pipe(cfg, std::move(data), std::move(emb));
    pipe.load_params(ck.at("params"));
    pipe.refresh();
    return pipe.evaluate(split_index);
}

CohortDiscovery discover_cohorts(const RunConfig& base) {
    RunConfig cfg = base;
    cfg.method = "core";
    cfg.ablation = "none";
    PreparedData data = prepare_data(cfg);
    Embeddings emb = train_embeddings(*data.dataset.ontology, cfg);
    Pipeline pipe(cfg, std::move(data), std::move(emb));
    CohortDiscovery out;
    out.final_pre_loss = pipe.warmup();
    pipe.compute_patient_features();
    // refresh() would also encode the backbone; only the clustering is needed.
    out.cohorts = cluster_patients(pipe.feature_table(pipe.patient_features()), cfg.n_cohorts);
    out.ari = pipe.planted_ari(out.cohorts);
    return out;
}

namespace {

const std::set<std::string>& sweepable() {
    static const std::set<std::string> keys{"model.n_cohorts", "model.gamma", "model.K",
                                            "model.S",         "pre.lambda",  "model.method"};
    return keys;
}

SweepRow run_row(RunConfig cfg, std::vector<std::pair<std::string, std::string>> values, const fs::path& dir) {
    SweepRow row;
    row.values = std::move(values);
    try {
        for (const auto& [k, v] : row.values) set_config_value(cfg, k, v);
        cfg.out_dir = dir.empty() ? std::string() : dir.string();
        validate_config(cfg);
        row.result = run_train(cfg);
    } catch (const std::exception& e) {
        row.status = "error";
        row.error = e.what();
    }
    return row;
}

std::string row_name(std::size_t i) {
    std::string s = std::to_string(i);
    return "run_" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

void write_sweep_outputs(const RunConfig& base, const std::vector<SweepRow>& rows, const std::string& csv_name,
                         const SweepGrid& grid) {
    if (base.out_dir.empty()) return;
    const fs::path out(base.out_dir);
    fs::create_directories(out / "curves");
    write_sweep_csv(rows, out / csv_name);
    write_text(out / "report.json", sweep_report_json(base, rows));
    for (const auto& [key, values] : grid) {
        std::vector<std::string> xs;
        std::vector<double> ys;
        for (const auto& v : values) {
            double sum = 0.0;
            int n = 0;
            for (const auto& r : rows) {
                if (r.status != "ok") continue;
                for (const auto& [k, rv] : r.values) {
                    if (k == key && rv == v) {
                        sum += r.result.test.auprc;
                        ++n;
                    }
                }
            }
            if (n == 0) continue;
            xs.push_back(v);
            ys.push_back(sum / n);
        }
        std::string file = key;
        std::replace(file.begin(), file.end(), '.', '_');
        write_line_chart_svg(out / "curves" / (file + ".svg"), "test AUPRC by " + key, key, xs, ys);
    }
}

}  // namespace

std::vector<SweepRow> run_sweep(const RunConfig& base, const SweepGrid& grid_in) {
    validate_config(base);
    SweepGrid grid;
    for (const auto& [key, values] : grid_in) {
        const std::string k = canonical_key(key);
        if (!sweepable().count(k)) throw ConfigError("parameter '" + key + "' cannot be swept");
        if (values.empty()) throw ConfigError("no values given for '" + key + "'");
        for (const auto& g : grid) {
            if (g.first == k) throw ConfigError("parameter '" + key + "' listed twice");
        }
        grid.emplace_back(k, values);
    }
    std::vector<SweepRow> rows;
    std::vector<std::size_t> pos(grid.size(), 0);
    for (;;) {
        std::vector<std::pair<std::string, std::string>> values;
        for (std::size_t g = 0; g < grid.size(); ++g) values.emplace_back(grid[g].first, grid[g].second[pos[g]]);
        const fs::path dir = base.out_dir.empty() ? fs::path() : fs::path(base.out_dir) / "runs" / row_name(rows.size());
        rows.push_back(run_row(base, std::move(values), dir));
        bool advanced = false;
        for (std::size_t g = grid.size(); g-- > 0 && !advanced;) {
            if (++pos[g] < grid[g].second.size()) {
                advanced = true;
            } else {
                pos[g] = 0;
            }
        }
        if (!advanced) break;
    }
    write_sweep_outputs(base, rows, "sweep.csv", grid);
    return rows;
}

std::vector<SweepRow> run_ablation(const RunConfig& base_in) {
    RunConfig base = base_in;
    base.method = "core";
    base.ablation = "none";
    validate_config(base);
    std::vector<SweepRow> rows;
    for (const char* variant : {"none", "no_precontext", "no_intra", "no_inter"}) {
        const fs::path dir = base.out_dir.empty() ? fs::path() : fs::path(base.out_dir) / "runs" / variant;
        rows.push_back(run_row(base, {{"model.ablation", variant}}, dir));
    }
    write_sweep_outputs(base, rows, "ablation.csv", {});
    return rows;
}

std::string report_json(const RunConfig& cfg, const TrainResult& r) {
    json j;
    j["config_hash"] = r.config_hash;
    j["method"] = cfg.method;
    j["ablation"] = cfg.ablation;
    j["backbone"] = cfg.backbone;
    j["seed"] = cfg.seed;
    j["best_epoch"] = r.best_epoch;
    j["n_cohorts"] = r.n_cohorts;
    if (r.cohort_ari >= -0.5) j["cohort_ari"] = r.cohort_ari;
    j["val"] = metrics_json(r.val);
    j["test"] = metrics_json(r.test);
    j["history"] = history_json(r.history);
    return j.dump(2) + "\n";
}

std::string sweep_report_json(const RunConfig& base, const std::vector<SweepRow>& rows) {
    json j;
    j["base_config_hash"] = config_hash(base);
    json runs = json::array();
    for (const auto& r : rows) {
        json e;
        json values = json::object();
        for (const auto& [k, v] : r.values) values[k] = v;
        e["values"] = values;
        e["status"] = r.status;
        if (r.status == "ok") {
            e["config_hash"] = r.result.config_hash;
            e["best_epoch"] = r.result.best_epoch;
            e["val"] = metrics_json(r.result.val);
            e["test"] = metrics_json(r.result.test);
        } else {
            e["error"] = r.error;
        }
        runs.push_back(e);
    }
    j["runs"] = runs;
    return j.dump(2) + "\n";
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path.string());
    std::vector<std::string> keys;
    for (const auto& r : rows) {
        for (const auto& kv : r.values) {
            if (std::find(keys.begin(), keys.end(), kv.first) == keys.end()) keys.push_back(kv.first);
        }
    }
    for (const auto& k : keys) out << csv::quote(k) << ',';
    out << "status,config_hash,best_epoch,val_auprc,test_auprc,test_accuracy,test_precision,test_recall,test_f1,error\n";
    std::ostringstream num;
    num.precision(17);
    const auto fmt = [&](double x) {
        num.str("");
        num << x;
        return num.str();
    };
    for (const auto& r : rows) {
        for (const auto& k : keys) {
            std::string v;
            for (const auto& kv : r.values) {
                if (kv.first == k) v = kv.second;
            }
            out << csv::quote(v) << ',';
        }
        out << r.status << ',';
        if (r.status == "ok") {
            const auto& t = r.result.test;
            out << r.result.config_hash << ',' << r.result.best_epoch << ',' << fmt(r.result.val.auprc) << ','
                << fmt(t.auprc) << ',' << fmt(t.accuracy) << ',' << fmt(t.precision) << ',' << fmt(t.recall) << ','
                << fmt(t.f1) << ",\n";
        } else {
            out << ",,,,,,,," << csv::quote(r.error) << '\n';
        }
    }
}

void write_line_chart_svg(const fs::path& path, const std::string& title, const std::string& x_label,
                          const std::vector<std::string>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ValidationError("chart: xs and ys differ in length");
    const double W = 480, H = 320, L = 60, R = 20, T = 40, B = 50;
    double lo = 0.0, hi = 1.0;
    if (!ys.empty()) {
        lo = *std::min_element(ys.begin(), ys.end());
        hi = *std::max_element(ys.begin(), ys.end());
        if (hi - lo < 1e-9) {
            lo -= 0.05;
            hi += 0.05;
        }
    }
    const auto esc = [](const std::string& s) {
        std::string o;
        for (char c : s) {
            if (c == '<') o += "&lt;";
            else if (c == '>') o += "&gt;";
            else if (c == '&') o += "&amp;";
            else o += c;
        }
        return o;
    };
    const auto px = [&](std::size_t i) {
        return xs.size() < 2 ? L + (W - L - R) / 2 : L + (W - L - R) * static_cast<double>(i) / static_cast<double>(xs.size() - 1);
    };
    const auto py = [&](double y) { return T + (H - T - B) * (1.0 - (y - lo) / (hi - lo)); };
    std::ostringstream s;
    s.precision(6);
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(title) << "</text>\n";
    s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">" << esc(x_label) << "</text>\n";
    s << "<text x=\"" << L - 5 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << hi << "</text>\n";
    s << "<text x=\"" << L - 5 << "\" y=\"" << H - B << "\" text-anchor=\"end\" font-size=\"10\">" << lo << "</text>\n";
    if (!ys.empty()) {
        s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < ys.size(); ++i) s << (i ? " " : "") << px(i) << ',' << py(ys[i]);
        s << "\"/>\n";
    }
    for (std::size_t i = 0; i < xs.size(); ++i) {
        s << "<circle cx=\"" << px(i) << "\" cy=\"" << py(ys[i]) << "\" r=\"3\" fill=\"steelblue\"/>\n";
        s << "<text x=\"" << px(i) << "\" y=\"" << H - B + 15 << "\" text-anchor=\"middle\" font-size=\"10\">" << esc(xs[i]) << "</text>\n";
    }
    s << "</svg>\n";
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text(path, s.str());
}

}  // namespace cohort
