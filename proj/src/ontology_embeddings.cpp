#include "cohort/ontology_embeddings.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "cohort/errors.hpp"
#include "cohort/nn.hpp"

namespace cohort {

const Vec& NodeEmbeddingTable::at(const std::string& id) const {
    auto it = vectors.find(id);
    if (it == vectors.end()) throw LookupError("node embedding: no vector for '" + id + "'");
    return it->second;
}

Vec SemanticVocab::vector(const std::string& token) const {
    auto it = word_vectors.find(token);
    if (it == word_vectors.end()) return Vec::Zero(dim);
    return it->second;
}

Vec SemanticVocab::sentence_vector(const std::vector<std::string>& tokens) const {
    Vec acc = Vec::Zero(dim);
    if (tokens.empty()) return acc;
    for (const auto& t : tokens) acc += vector(t);
    return acc / static_cast<double>(tokens.size());
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c) || std::ispunct(c)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::vector<std::string> code_sentence(const std::string& code_id, const OntologyTree& tree) {
    std::vector<std::string> out;
    for (const auto& id : tree.path_from_root(code_id)) {
        auto toks = tokenize(tree.node(id).semantic_text);
        out.insert(out.end(), toks.begin(), toks.end());
    }
    return out;
}

namespace {

double sigmoid(double x) {
    if (x > 30) return 1.0;
    if (x < -30) return 0.0;
    return 1.0 / (1.0 + std::exp(-x));
}

}  // namespace

NodeEmbeddingTable train_node_embeddings(const OntologyTree& tree, const NodeEmbeddingOptions& opts) {
    if (tree.size() < 2) throw ValidationError("node embeddings: tree needs at least 2 nodes");
    if (opts.dim < 2) throw ValidationError("node embeddings: dim must be >= 2");
    if (opts.walks_per_node < 1 || opts.walk_length < 2 || opts.window < 1 || opts.epochs < 1) {
        throw ValidationError("node embeddings: walk parameters must be positive");
    }

    std::vector<std::string> ids;
    std::unordered_map<std::string, int> index;
    for (const auto& [id, n] : tree.nodes()) {
        index[id] = static_cast<int>(ids.size());
        ids.push_back(id);
    }
    const int n_nodes = static_cast<int>(ids.size());
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n_nodes));
    for (const auto& [id, n] : tree.nodes()) {
        if (id == tree.root_id()) continue;
        const int a = index.at(id);
        const int b = index.at(n.parent_id);
        adj[static_cast<std::size_t>(a)].push_back(b);
        adj[static_cast<std::size_t>(b)].push_back(a);
    }

    Rng rng = Rng::derive(opts.seed, "node2vec");
    std::vector<std::vector<int>> walks;
    walks.reserve(static_cast<std::size_t>(n_nodes * opts.walks_per_node));
    std::vector<int> starts(static_cast<std::size_t>(n_nodes));
    std::iota(starts.begin(), starts.end(), 0);
    for (int w = 0; w < opts.walks_per_node; ++w) {
        rng.shuffle(starts);
        for (int s : starts) {
            std::vector<int> walk{s};
            walk.reserve(static_cast<std::size_t>(opts.walk_length));
            while (static_cast<int>(walk.size()) < opts.walk_length) {
                const auto& nb = adj[static_cast<std::size_t>(walk.back())];
                if (nb.empty()) break;
                walk.push_back(nb[rng.below(nb.size())]);
            }
            walks.push_back(std::move(walk));
        }
    }

    // Noise distribution: walk frequency ^ 0.75, sampled by inverse CDF.
    std::vector<double> freq(static_cast<std::size_t>(n_nodes), 0.0);
    for (const auto& w : walks) {
        for (int v : w) freq[static_cast<std::size_t>(v)] += 1.0;
    }
    std::vector<double> cdf(freq.size());
    double total = 0.0;
    for (std::size_t i = 0; i < freq.size(); ++i) {
        total += std::pow(freq[i], 0.75);
        cdf[i] = total;
    }
    const auto draw_negative = [&]() {
        const double u = rng.uniform() * total;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), n_nodes - 1));
    };

    const int dim = opts.dim;
    Eigen::MatrixXd in(dim, n_nodes);
    for (int c = 0; c < n_nodes; ++c) {
        for (int r = 0; r < dim; ++r) in(r, c) = (rng.uniform() - 0.5) / dim;
    }
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim, n_nodes);

    long total_steps = 0;
    for (const auto& w : walks) total_steps += static_cast<long>(w.size());
    total_steps *= opts.epochs;
    long step = 0;
    Vec grad_in(dim);
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        for (const auto& walk : walks) {
            const int len = static_cast<int>(walk.size());
            for (int i = 0; i < len; ++i, ++step) {
                const double lr = std::max(opts.learning_rate * 1e-4,
                                           opts.learning_rate * (1.0 - static_cast<double>(step) /
                                                                           static_cast<double>(total_steps)));
                const int center = walk[static_cast<std::size_t>(i)];
                const int lo = std::max(0, i - opts.window);
                const int hi = std::min(len - 1, i + opts.window);
                for (int j = lo; j <= hi; ++j) {
                    if (j == i) continue;
                    const int context = walk[static_cast<std::size_t>(j)];
                    grad_in.setZero();
                    for (int k = 0; k <= opts.negatives; ++k) {
                        const int target = k == 0 ? context : draw_negative();
                        if (k > 0 && target == context) continue;
                        const double label = k == 0 ? 1.0 : 0.0;
                        const double score = sigmoid(in.col(center).dot(out.col(target)));
                        const double g = lr * (label - score);
                        grad_in += g * out.col(target);
                        out.col(target) += g * in.col(center);
                    }
                    in.col(center) += grad_in;
                }
            }
        }
    }

    NodeEmbeddingTable table;
    table.dim = dim;
    for (int c = 0; c < n_nodes; ++c) table.vectors[ids[static_cast<std::size_t>(c)]] = in.col(c);
    quantize_to_float(table.vectors);
    return table;
}

SemanticVocab train_semantic_vectors(const std::vector<std::vector<std::string>>& sentences,
                                     const SemanticOptions& opts) {
    if (opts.dim < 1) throw ValidationError("semantic vectors: dim must be >= 1");
    std::map<std::string, int> index;
    for (const auto& s : sentences) {
        for (const auto& t : s) index.emplace(t, 0);
    }
    if (index.empty()) throw ValidationError("semantic vectors: empty corpus");
    std::vector<std::string> tokens;
    for (auto& [tok, i] : index) {
        i = static_cast<int>(tokens.size());
        tokens.push_back(tok);
    }
    const int n_tok = static_cast<int>(tokens.size());

    std::map<std::pair<int, int>, double> counts;
    for (const auto& s : sentences) {
        const int len = static_cast<int>(s.size());
        for (int i = 0; i < len; ++i) {
            const int a = index.at(s[static_cast<std::size_t>(i)]);
            for (int j = std::max(0, i - opts.window); j < i; ++j) {
                const int b = index.at(s[static_cast<std::size_t>(j)]);
                counts[{a, b}] += 1.0;
                counts[{b, a}] += 1.0;
            }
        }
    }
    struct Entry {
        int i, j;
        double x;
    };
    std::vector<Entry> entries;
    entries.reserve(counts.size());
    for (const auto& [k, x] : counts) entries.push_back({k.first, k.second, x});

    Rng rng = Rng::derive(opts.seed, "glove");
    const int dim = opts.dim;
    const auto init = [&](Eigen::MatrixXd& m) {
        m.resize(dim, n_tok);
        for (int c = 0; c < n_tok; ++c) {
            for (int r = 0; r < dim; ++r) m(r, c) = (rng.uniform() - 0.5) / dim;
        }
    };
    Eigen::MatrixXd w, wc;
    init(w);
    init(wc);
    Vec b = Vec::Zero(n_tok), bc = Vec::Zero(n_tok);
    Eigen::MatrixXd gw = Eigen::MatrixXd::Ones(dim, n_tok), gwc = Eigen::MatrixXd::Ones(dim, n_tok);
    Vec gb = Vec::Ones(n_tok), gbc = Vec::Ones(n_tok);

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        rng.shuffle(entries);
        for (const auto& e : entries) {
            const double weight = std::min(1.0, std::pow(e.x / opts.x_max, opts.alpha));
            const double diff = w.col(e.i).dot(wc.col(e.j)) + b(e.i) + bc(e.j) - std::log(e.x);
            const double fdiff = std::clamp(weight * diff, -100.0, 100.0);
            const Vec dw = fdiff * wc.col(e.j);
            const Vec dwc = fdiff * w.col(e.i);
            w.col(e.i).array() -= opts.learning_rate * dw.array() / gw.col(e.i).array().sqrt();
            wc.col(e.j).array() -= opts.learning_rate * dwc.array() / gwc.col(e.j).array().sqrt();
            gw.col(e.i).array() += dw.array().square();
            gwc.col(e.j).array() += dwc.array().square();
            b(e.i) -= opts.learning_rate * fdiff / std::sqrt(gb(e.i));
            bc(e.j) -= opts.learning_rate * fdiff / std::sqrt(gbc(e.j));
            gb(e.i) += fdiff * fdiff;
            gbc(e.j) += fdiff * fdiff;
        }
    }

    SemanticVocab vocab;
    vocab.dim = dim;
    for (int c = 0; c < n_tok; ++c) {
        vocab.word_vectors[tokens[static_cast<std::size_t>(c)]] = w.col(c) + wc.col(c);
    }
    quantize_to_float(vocab.word_vectors);
    return vocab;
}

HierEmbedParams::HierEmbedParams(int out_dim, int in_dim, Rng& rng)
    : W_H("hier.W_H", nn::glorot(out_dim, in_dim, rng)), b_H("hier.b_H", nn::zeros(out_dim, 1)) {}

std::vector<ad::Param*> HierEmbedParams::parameters() {
    if (!trainable) return {};
    return {&W_H, &b_H};
}

Vec hier_input(const std::string& code_id, const OntologyTree& tree,
               const NodeEmbeddingTable& nodes, const SemanticVocab& vocab) {
    const Vec& nv = nodes.at(code_id);
    const Vec sv = vocab.sentence_vector(code_sentence(code_id, tree));
    Vec out(nv.size() + sv.size());
    out << nv, sv;
    return out;
}

Vec hierarchical_embed(const std::vector<std::string>& code_ids, const OntologyTree& tree,
                       const NodeEmbeddingTable& nodes, const SemanticVocab& vocab,
                       const HierEmbedParams& params) {
    if (code_ids.empty()) throw ValidationError("hierarchical_embed: empty code set");
    Vec acc = Vec::Zero(params.out_dim());
    for (const auto& id : code_ids) {
        const Vec x = hier_input(id, tree, nodes, vocab);
        if (x.size() != params.in_dim()) {
            throw ValidationError("hierarchical_embed: W_H expects input width " +
                                  std::to_string(params.in_dim()));
        }
        acc += params.W_H.value * x + params.b_H.value.col(0);
    }
    return acc / static_cast<double>(code_ids.size());
}

ad::Var hierarchical_embed(ad::Tape& tape, const ad::Mat& mean_inputs, const HierEmbedParams& params) {
    ad::Var w = params.trainable ? tape.param(params.W_H) : tape.constant(params.W_H.value);
    ad::Var b = params.trainable ? tape.param(params.b_H) : tape.constant(params.b_H.value);
    return ad::add(ad::matmul(w, tape.constant(mean_inputs)), b);
}

namespace {

constexpr char kMagic[8] = {'C', 'O', 'R', 'E', '-', 'E', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T v) {
    std::array<unsigned char, sizeof(T)> bytes{};
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    std::array<unsigned char, sizeof(T)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
    if (!in) throw ParseError("embedding table: truncated file");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return static_cast<T>(v);
}

}  // namespace

void save_embedding_table(const std::map<std::string, Vec>& table, int dim,
                          const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write embedding table " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
    put_le<std::uint64_t>(out, table.size());
    for (const auto& [id, vec] : table) {
        if (vec.size() != dim) throw ValidationError("embedding table: vector width != dim");
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
        for (Eigen::Index k = 0; k < vec.size(); ++k) {
            const float f = static_cast<float>(vec(k));
            std::uint32_t bits;
            std::memcpy(&bits, &f, sizeof(bits));
            put_le<std::uint32_t>(out, bits);
        }
    }
}

std::map<std::string, Vec> load_embedding_table(const std::filesystem::path& path, int* dim_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open embedding table " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ParseError("embedding table: bad magic");
    }
    const auto version = get_le<std::uint32_t>(in);
    if (version != kVersion) throw ParseError("embedding table: unsupported version");
    const auto dim = static_cast<int>(get_le<std::uint32_t>(in));
    const auto count = get_le<std::uint64_t>(in);
    std::map<std::string, Vec> table;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = get_le<std::uint32_t>(in);
        std::string id(len, '\0');
        in.read(id.data(), len);
        if (!in) throw ParseError("embedding table: truncated id");
        Vec v(dim);
        for (int k = 0; k < dim; ++k) {
            const auto bits = get_le<std::uint32_t>(in);
            float f;
            std::memcpy(&f, &bits, sizeof(f));
            v(k) = f;
        }
        table.emplace(std::move(id), std::move(v));
    }
    if (dim_out) *dim_out = dim;
    return table;
}

void quantize_to_float(std::map<std::string, Vec>& table) {
    for (auto& [id, v] : table) {
        for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = static_cast<double>(static_cast<float>(v(k)));
    }
}

}  // namespace cohort
