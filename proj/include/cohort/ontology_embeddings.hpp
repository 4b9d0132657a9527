#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cohort/autodiff.hpp"
#include "cohort/ontology_tree.hpp"
#include "cohort/rng.hpp"

namespace cohort {

using Vec = Eigen::VectorXd;

/// Hierarchy-view vectors, one per ontology node.
struct NodeEmbeddingTable {
    int dim = 0;
    std::map<std::string, Vec> vectors;

    const Vec& at(const std::string& id) const;
};

/// Semantics-view word vectors. Unknown tokens map to the zero vector.
struct SemanticVocab {
    int dim = 0;
    std::map<std::string, Vec> word_vectors;

    Vec vector(const std::string& token) const;
    /// Mean of the token vectors; zero for an empty list.
    Vec sentence_vector(const std::vector<std::string>& tokens) const;
};

/// Lowercase, split on whitespace and punctuation.
std::vector<std::string> tokenize(const std::string& text);

/// Tokens of the semantic texts on the path root -> code (root excluded).
std::vector<std::string> code_sentence(const std::string& code_id, const OntologyTree& tree);

struct NodeEmbeddingOptions {
    int dim = 32;
    int walks_per_node = 10;
    int walk_length = 20;
    int window = 5;
    int negatives = 5;
    int epochs = 1;
    double learning_rate = 0.025;
    std::uint64_t seed = 0;
};

/// Skip-gram with negative sampling over uniform random walks on the
/// undirected tree edges.
NodeEmbeddingTable train_node_embeddings(const OntologyTree& tree, const NodeEmbeddingOptions& opts);

struct SemanticOptions {
    int dim = 32;
    int window = 5;
    int epochs = 50;
    double x_max = 100.0;
    double alpha = 0.75;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
};

/// Weighted least-squares factorisation of symmetric window co-occurrence
/// counts, weight min(1, (x / x_max)^alpha), AdaGrad updates. The returned
/// vector of a token is the sum of its word and context vectors.
SemanticVocab train_semantic_vectors(const std::vector<std::vector<std::string>>& sentences,
                                     const SemanticOptions& opts);

/// Linear map from concat(node vector, sentence vector) to the code space.
struct HierEmbedParams {
    ad::Param W_H;
    ad::Param b_H;
    bool trainable = true;

    HierEmbedParams() = default;
    HierEmbedParams(int out_dim, int in_dim, Rng& rng);
    int out_dim() const { return static_cast<int>(W_H.value.rows()); }
    int in_dim() const { return static_cast<int>(W_H.value.cols()); }
    std::vector<ad::Param*> parameters();
};

/// concat(node vector, mean word vector of the code's sentence).
Vec hier_input(const std::string& code_id, const OntologyTree& tree,
               const NodeEmbeddingTable& nodes, const SemanticVocab& vocab);

/// Mean over the code set of W_H * hier_input(code) + b_H.
Vec hierarchical_embed(const std::vector<std::string>& code_ids, const OntologyTree& tree,
                       const NodeEmbeddingTable& nodes, const SemanticVocab& vocab,
                       const HierEmbedParams& params);

/// Tape form: columns of `mean_inputs` hold per-visit means of hier_input,
/// which by linearity gives the same result as averaging per-code outputs.
ad::Var hierarchical_embed(ad::Tape& tape, const ad::Mat& mean_inputs, const HierEmbedParams& params);

/// Flat binary table: "CORE-EMB", u32 version, u32 dim, u64 count, then
/// {u32 id_len, id bytes, dim x f32}, little-endian.
void save_embedding_table(const std::map<std::string, Vec>& table, int dim,
                          const std::filesystem::path& path);
std::map<std::string, Vec> load_embedding_table(const std::filesystem::path& path, int* dim_out = nullptr);

/// Rounds every component to the nearest float32 so tables survive the
/// binary format unchanged.
void quantize_to_float(std::map<std::string, Vec>& table);

}  // namespace cohort
