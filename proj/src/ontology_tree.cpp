#include "cohort/ontology_tree.hpp"

#include <fstream>
#include <set>

#include "cohort/csv.hpp"
#include "cohort/errors.hpp"

namespace cohort {

OntologyTree OntologyTree::from_rows(const std::vector<OntologyRow>& rows) {
    OntologyTree tree;
    for (const auto& r : rows) {
        if (r.child_id.empty()) throw ValidationError("ontology: empty node id");
        if (r.child_id == kRootSentinel) {
            throw ValidationError("ontology: node id may not be the ROOT sentinel");
        }
        if (tree.nodes_.count(r.child_id)) {
            throw ValidationError("ontology: duplicate node id '" + r.child_id + "'");
        }
        if (r.parent_id == kRootSentinel) {
            if (!tree.root_.empty()) {
                throw ValidationError("ontology: more than one root ('" + tree.root_ +
                                      "', '" + r.child_id + "')");
            }
            tree.root_ = r.child_id;
            tree.nodes_[r.child_id] = OntologyNode{"", r.semantic_text};
        } else {
            tree.nodes_[r.child_id] = OntologyNode{r.parent_id, r.semantic_text};
        }
    }
    if (tree.root_.empty()) throw ValidationError("ontology: no root row");
    for (const auto& [id, n] : tree.nodes_) {
        if (id == tree.root_) continue;
        if (!tree.nodes_.count(n.parent_id)) {
            throw ValidationError("ontology: parent '" + n.parent_id + "' of '" + id +
                                  "' does not exist");
        }
        tree.children_[n.parent_id].push_back(id);
    }
    // Every node must reach the root within size() hops.
    for (const auto& [id, n] : tree.nodes_) {
        std::string cur = id;
        std::size_t hops = 0;
        while (cur != tree.root_) {
            cur = tree.nodes_.at(cur).parent_id;
            if (++hops > tree.nodes_.size()) {
                throw ValidationError("ontology: cycle through '" + id + "'");
            }
        }
    }
    return tree;
}

const OntologyNode& OntologyTree::node(const std::string& id) const {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw LookupError("ontology: unknown code '" + id + "'");
    return it->second;
}

const std::vector<std::string>& OntologyTree::children(const std::string& id) const {
    static const std::vector<std::string> kNone;
    auto it = children_.find(id);
    return it == children_.end() ? kNone : it->second;
}

std::vector<std::string> OntologyTree::path_from_root(const std::string& id) const {
    std::vector<std::string> path;
    std::string cur = id;
    node(cur);
    while (cur != root_) {
        path.push_back(cur);
        cur = nodes_.at(cur).parent_id;
    }
    return {path.rbegin(), path.rend()};
}

std::vector<std::string> OntologyTree::leaves() const {
    std::vector<std::string> out;
    for (const auto& [id, n] : nodes_) {
        if (id != root_ && !children_.count(id)) out.push_back(id);
    }
    return out;
}

std::vector<OntologyRow> OntologyTree::rows() const {
    std::vector<OntologyRow> out;
    out.push_back({root_, kRootSentinel, nodes_.at(root_).semantic_text});
    for (const auto& [id, n] : nodes_) {
        if (id != root_) out.push_back({id, n.parent_id, n.semantic_text});
    }
    return out;
}

OntologyTree load_ontology_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open ontology file " + path.string());
    std::vector<OntologyRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = csv::split_line(line, lineno);
        if (lineno == 1 && fields.size() == 3 && fields[0] == "child_id") continue;
        if (fields.size() != 3) {
            throw ParseError("expected 3 fields (child_id,parent_id,semantic_text), got " +
                                 std::to_string(fields.size()),
                             lineno);
        }
        rows.push_back({fields[0], fields[1], fields[2]});
    }
    return OntologyTree::from_rows(rows);
}

void save_ontology_csv(const OntologyTree& tree, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write ontology file " + path.string());
    out << "child_id,parent_id,semantic_text\n";
    for (const auto& r : tree.rows()) {
        out << csv::quote(r.child_id) << ',' << csv::quote(r.parent_id) << ','
            << csv::quote(r.semantic_text) << '\n';
    }
}

}  // namespace cohort
