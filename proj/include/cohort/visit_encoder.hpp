#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cohort/autodiff.hpp"
#include "cohort/ehr_data.hpp"
#include "cohort/ontology_embeddings.hpp"

namespace cohort {

/// Affine stack medication/lab -> intermediate, diagnosis -> visit.
struct VisitEncoderParams {
    ad::Param W_M, b_M;    // d x med_vocab, d
    ad::Param W_L, b_L;    // d x lab_vocab, d
    ad::Param W_D, b_D;    // d x diag_in, d
    ad::Param W_Vi, b_Vi;  // d x 2d, d
    ad::Param W_V, b_V;    // d x 2d, d
    /// Optional tanh after the two visit-level maps. Off by default, which
    /// keeps the stack purely affine.
    bool tanh_visit = false;

    VisitEncoderParams() = default;
    VisitEncoderParams(int d, int med_vocab, int lab_vocab, int diag_in, Rng& rng);

    int dim() const { return static_cast<int>(W_V.value.rows()); }
    int med_vocab() const { return static_cast<int>(W_M.value.cols()); }
    int lab_vocab() const { return static_cast<int>(W_L.value.cols()); }
    int diag_in() const { return static_cast<int>(W_D.value.cols()); }
    std::vector<ad::Param*> parameters();
    void validate() const;
};

struct VisitFeature {
    std::string visit_id;
    Vec vector;
};

/// Multi-hot of `codes` (all of `kind`) over a vocabulary of `vocab_size`.
Vec encode_code_multihot(const std::vector<MedicalCode>& codes, CodeKind kind, std::size_t vocab_size);
/// Column-batched multi-hot: one column per code set.
ad::Mat multihot_batch(const std::vector<const CodeSet*>& sets, std::size_t vocab_size);

/// Tape form over a batch (one visit per column).
ad::Var encode_visits(ad::Tape& tape, const ad::Mat& med_multihot, const ad::Mat& lab_multihot,
                      ad::Var f_D, const VisitEncoderParams& params);

using DiagnosisAggregate = std::function<Vec(const CodeSet&)>;

/// Single visit. `hier` produces f^D (the aggregated hierarchical embedding)
/// from the diagnosis codes.
VisitFeature encode_visit(const Visit& visit, const VisitEncoderParams& params,
                          const DiagnosisAggregate& hier);

/// Per-diagnosis-code hierarchical inputs (columns indexed by vocab index),
/// so a visit's f^D input is a column mean over its codes.
class DiagnosisInputTable {
   public:
    DiagnosisInputTable() = default;
    DiagnosisInputTable(const Vocabulary& diagnosis_vocab, const OntologyTree& tree,
                        const NodeEmbeddingTable& nodes, const SemanticVocab& vocab);

    int width() const { return static_cast<int>(inputs_.rows()); }
    /// Column-batched means over each visit's diagnosis codes.
    ad::Mat mean_inputs(const std::vector<const CodeSet*>& sets) const;
    const ad::Mat& inputs() const { return inputs_; }

   private:
    ad::Mat inputs_;
};

}  // namespace cohort
