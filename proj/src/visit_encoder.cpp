#include "cohort/visit_encoder.hpp"

#include "cohort/errors.hpp"
#include "cohort/nn.hpp"

namespace cohort {

VisitEncoderParams::VisitEncoderParams(int d, int med_vocab, int lab_vocab, int diag_in, Rng& rng)
    : W_M("visit.W_M", nn::glorot(d, med_vocab, rng)),
      b_M("visit.b_M", nn::zeros(d, 1)),
      W_L("visit.W_L", nn::glorot(d, lab_vocab, rng)),
      b_L("visit.b_L", nn::zeros(d, 1)),
      W_D("visit.W_D", nn::glorot(d, diag_in, rng)),
      b_D("visit.b_D", nn::zeros(d, 1)),
      W_Vi("visit.W_Vi", nn::glorot(d, 2 * d, rng)),
      b_Vi("visit.b_Vi", nn::zeros(d, 1)),
      W_V("visit.W_V", nn::glorot(d, 2 * d, rng)),
      b_V("visit.b_V", nn::zeros(d, 1)) {}

std::vector<ad::Param*> VisitEncoderParams::parameters() {
    return {&W_M, &b_M, &W_L, &b_L, &W_D, &b_D, &W_Vi, &b_Vi, &W_V, &b_V};
}

void VisitEncoderParams::validate() const {
    const auto d = W_V.value.rows();
    const bool ok = W_M.value.rows() == d && b_M.value.rows() == d && W_L.value.rows() == d &&
                    b_L.value.rows() == d && W_D.value.rows() == d && b_D.value.rows() == d &&
                    W_Vi.value.rows() == d && W_Vi.value.cols() == 2 * d && b_Vi.value.rows() == d &&
                    W_V.value.cols() == 2 * d && b_V.value.rows() == d;
    if (!ok) throw ValidationError("visit encoder: inconsistent parameter shapes");
}

Vec encode_code_multihot(const std::vector<MedicalCode>& codes, CodeKind kind, std::size_t vocab_size) {
    Vec out = Vec::Zero(static_cast<Eigen::Index>(vocab_size));
    for (const auto& c : codes) {
        if (c.kind != kind) {
            throw ValidationError(std::string("multi-hot: code '") + c.id + "' is not of kind " +
                                  to_string(kind));
        }
        if (c.vocab_index >= vocab_size) {
            throw ValidationError("multi-hot: index " + std::to_string(c.vocab_index) +
                                  " >= vocabulary size " + std::to_string(vocab_size));
        }
        out(c.vocab_index) = 1.0;
    }
    return out;
}

ad::Mat multihot_batch(const std::vector<const CodeSet*>& sets, std::size_t vocab_size) {
    ad::Mat out = ad::Mat::Zero(static_cast<Eigen::Index>(vocab_size),
                                static_cast<Eigen::Index>(sets.size()));
    for (std::size_t c = 0; c < sets.size(); ++c) {
        for (auto idx : *sets[c]) {
            if (idx >= vocab_size) {
                throw ValidationError("multi-hot: index " + std::to_string(idx) +
                                      " >= vocabulary size " + std::to_string(vocab_size));
            }
            out(idx, static_cast<Eigen::Index>(c)) = 1.0;
        }
    }
    return out;
}

ad::Var encode_visits(ad::Tape& tape, const ad::Mat& med_multihot, const ad::Mat& lab_multihot,
                      ad::Var f_D, const VisitEncoderParams& p) {
    using namespace ad;
    const auto affine_map = [&](const Param& w, const Param& b, Var x) {
        return add(matmul(tape.param(w), x), tape.param(b));
    };
    Var f_M = affine_map(p.W_M, p.b_M, tape.constant(med_multihot));
    Var f_L = affine_map(p.W_L, p.b_L, tape.constant(lab_multihot));
    Var f_Dv = affine_map(p.W_D, p.b_D, f_D);
    Var inter = affine_map(p.W_Vi, p.b_Vi, vstack({f_M, f_L}));
    if (p.tanh_visit) inter = ad::tanh(inter);
    Var visit = affine_map(p.W_V, p.b_V, vstack({inter, f_Dv}));
    if (p.tanh_visit) visit = ad::tanh(visit);
    return visit;
}

VisitFeature encode_visit(const Visit& visit, const VisitEncoderParams& params,
                          const DiagnosisAggregate& hier) {
    if (visit.diagnosis_codes.empty()) {
        throw ValidationError("encode_visit: visit '" + visit.visit_id + "' has no diagnosis codes");
    }
    params.validate();
    const Vec f_D = hier(visit.diagnosis_codes);
    if (f_D.size() != params.diag_in()) {
        throw ValidationError("encode_visit: diagnosis aggregate width does not match W_D");
    }
    ad::Tape tape;
    ad::Var out = encode_visits(
        tape, multihot_batch({&visit.medication_codes}, static_cast<std::size_t>(params.med_vocab())),
        multihot_batch({&visit.lab_codes}, static_cast<std::size_t>(params.lab_vocab())),
        tape.constant(f_D), params);
    return {visit.visit_id, out.value().col(0)};
}

DiagnosisInputTable::DiagnosisInputTable(const Vocabulary& diagnosis_vocab, const OntologyTree& tree,
                                         const NodeEmbeddingTable& nodes, const SemanticVocab& vocab) {
    inputs_.resize(nodes.dim + vocab.dim, static_cast<Eigen::Index>(diagnosis_vocab.size()));
    for (std::uint32_t i = 0; i < diagnosis_vocab.size(); ++i) {
        inputs_.col(i) = hier_input(diagnosis_vocab.id(i), tree, nodes, vocab);
    }
}

ad::Mat DiagnosisInputTable::mean_inputs(const std::vector<const CodeSet*>& sets) const {
    ad::Mat out = ad::Mat::Zero(inputs_.rows(), static_cast<Eigen::Index>(sets.size()));
    for (std::size_t c = 0; c < sets.size(); ++c) {
        const CodeSet& s = *sets[c];
        if (s.empty()) throw ValidationError("visit without diagnosis codes");
        for (auto idx : s) out.col(static_cast<Eigen::Index>(c)) += inputs_.col(idx);
        out.col(static_cast<Eigen::Index>(c)) /= static_cast<double>(s.size());
    }
    return out;
}

}  // namespace cohort
