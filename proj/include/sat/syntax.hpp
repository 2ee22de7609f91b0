#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace sat {

// Registered grammars. Toy is a bracketed s-expression language whose
// parens are themselves leaves; Mini is a small one-line-per-statement
// language with `def` functions, calls, operators and :symbol literals.
enum class Language { Toy, Mini };

Language language_from_string(const std::string& name);
std::string to_string(Language lang);

struct SourceUnit {
    std::string text;
    Language language = Language::Mini;
};

struct TreeNode {
    int parent = -1;            // -1 only for the root
    std::vector<int> children;  // in source order
    std::string kind;           // rule name, or token kind for leaves
    int begin = 0;              // byte span [begin, end)
    int end = 0;
    std::string text;           // leaf token text; empty for internal nodes
};

struct SyntaxTree {
    std::vector<TreeNode> nodes;
    int root = -1;

    bool is_leaf(int id) const { return nodes[id].children.empty(); }
    // Edge count from the root.
    int depth(int id) const;
    bool has_error_nodes() const;
};

struct LeafToken {
    std::string text;
    int begin = 0;
    int end = 0;
    int node = -1;  // index into the owning tree
    int depth = 0;
};

struct LeafTokenSequence {
    std::vector<LeafToken> tokens;
    int size() const { return static_cast<int>(tokens.size()); }
};

enum class Granularity { Token, Subtoken };

// Symmetric integer matrix of tree shortest-path distances.
struct DistanceMatrix {
    int n = 0;
    std::vector<int> d;  // n*n, row-major
    Granularity granularity = Granularity::Token;
    std::vector<std::string> labels;  // one per row: token or subtoken text

    DistanceMatrix() = default;
    DistanceMatrix(int size, Granularity g)
        : n(size), d(static_cast<size_t>(size) * size, 0), granularity(g) {}

    int& at(int i, int j) { return d[static_cast<size_t>(i) * n + j]; }
    int at(int i, int j) const { return d[static_cast<size_t>(i) * n + j]; }
};

// Parses source into a concrete syntax tree. Strict mode (the default)
// throws ParseError on any malformed input; lenient mode instead emits
// an `error` leaf covering the unparsable stretch and resumes at the
// next statement boundary.
SyntaxTree parse(const SourceUnit& source, bool strict = true);

// Leaves in source order, each with its node index and depth.
LeafTokenSequence extract_leaves(const SyntaxTree& tree);

// Entry (i,j) is the number of edges on the unique undirected tree path
// between leaf i and leaf j, via depth(u) + depth(v) - 2*depth(lca).
DistanceMatrix token_distance_matrix(const LeafTokenSequence& leaves, const SyntaxTree& tree);

// Same matrix computed by breadth-first search over the undirected edge
// set. Slower; exists as an independent check on the LCA path.
DistanceMatrix bfs_distance_oracle(const SyntaxTree& tree);

nlohmann::json to_json(const DistanceMatrix& m);
DistanceMatrix distance_matrix_from_json(const nlohmann::json& j);

}  // namespace sat
