#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cohort {

struct OntologyNode {
    std::string parent_id;  // empty for the root
    std::string semantic_text;
};

/// One `child_id,parent_id,semantic_text` row of the ontology CSV.
struct OntologyRow {
    std::string child_id;
    std::string parent_id;
    std::string semantic_text;
};

/// Rooted tree of medical codes. The root is the unique node whose parent
/// is the `ROOT` sentinel in the CSV form.
class OntologyTree {
   public:
    static constexpr const char* kRootSentinel = "ROOT";

    OntologyTree() = default;

    /// Validates: exactly one root, every parent exists, no cycles.
    static OntologyTree from_rows(const std::vector<OntologyRow>& rows);

    const std::string& root_id() const { return root_; }
    std::size_t size() const { return nodes_.size(); }
    bool contains(const std::string& id) const { return nodes_.count(id) != 0; }
    const OntologyNode& node(const std::string& id) const;
    const std::map<std::string, OntologyNode>& nodes() const { return nodes_; }
    const std::vector<std::string>& children(const std::string& id) const;

    /// Node ids from just below the root down to `id` (root excluded).
    std::vector<std::string> path_from_root(const std::string& id) const;
    std::vector<std::string> leaves() const;
    std::size_t depth(const std::string& id) const { return path_from_root(id).size(); }

    std::vector<OntologyRow> rows() const;

   private:
    std::string root_;
    std::map<std::string, OntologyNode> nodes_;
    std::map<std::string, std::vector<std::string>> children_;
};

OntologyTree load_ontology_csv(const std::filesystem::path& path);
void save_ontology_csv(const OntologyTree& tree, const std::filesystem::path& path);

}  // namespace cohort
