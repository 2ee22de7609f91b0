#include "sat/syntax.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <string_view>

#include "sat/errors.hpp"

namespace sat {

Language language_from_string(const std::string& name) {
    if (name == "toy") return Language::Toy;
    if (name == "mini") return Language::Mini;
    throw UnsupportedLanguage("unknown language '" + name + "' (expected 'toy' or 'mini')");
}

std::string to_string(Language lang) {
    return lang == Language::Toy ? "toy" : "mini";
}

int SyntaxTree::depth(int id) const {
    int d = 0;
    while (nodes[id].parent != -1) {
        id = nodes[id].parent;
        ++d;
    }
    return d;
}

bool SyntaxTree::has_error_nodes() const {
    return std::any_of(nodes.begin(), nodes.end(),
                       [](const TreeNode& n) { return n.kind == "error"; });
}

namespace {

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Arena construction shared by both grammars.
struct TreeBuilder {
    SyntaxTree tree;

    int make(const std::string& kind, int begin, int end, std::string text = {}) {
        TreeNode n;
        n.kind = kind;
        n.begin = begin;
        n.end = end;
        n.text = std::move(text);
        tree.nodes.push_back(std::move(n));
        return static_cast<int>(tree.nodes.size()) - 1;
    }

    void attach(int parent, int child) {
        tree.nodes[child].parent = parent;
        tree.nodes[parent].children.push_back(child);
        // Parent spans grow to cover children.
        tree.nodes[parent].begin = std::min(tree.nodes[parent].begin, tree.nodes[child].begin);
        tree.nodes[parent].end = std::max(tree.nodes[parent].end, tree.nodes[child].end);
    }
};

[[noreturn]] void fail(int pos, const std::string& what) {
    throw ParseError("byte " + std::to_string(pos) + ": " + what);
}

// ---------------------------------------------------------------- Mini

enum class TokKind { KwDef, Ident, Number, Symbol, Punct, Newline, Bad, End };

struct Token {
    TokKind kind;
    std::string text;
    int begin = 0;
    int end = 0;
};

// `:name` is a symbol literal only in argument position, i.e. when the
// previous significant token is '(' or ','. Everywhere else ':' is
// plain punctuation (as in a def header).
std::vector<Token> lex_mini(const std::string& s, bool strict) {
    std::vector<Token> out;
    int i = 0;
    int n = static_cast<int>(s.size());
    auto prev_significant = [&]() -> const Token* {
        for (auto it = out.rbegin(); it != out.rend(); ++it)
            if (it->kind != TokKind::Newline) return &*it;
        return nullptr;
    };
    while (i < n) {
        char c = s[i];
        if (c == ' ' || c == '\t' || c == '\r') {
            ++i;
            continue;
        }
        if (c == '\n') {
            out.push_back({TokKind::Newline, "\n", i, i + 1});
            ++i;
            continue;
        }
        if (ident_start(c)) {
            int b = i;
            while (i < n && ident_char(s[i])) ++i;
            std::string t = s.substr(b, i - b);
            out.push_back({t == "def" ? TokKind::KwDef : TokKind::Ident, t, b, i});
            continue;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            int b = i;
            while (i < n && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
            out.push_back({TokKind::Number, s.substr(b, i - b), b, i});
            continue;
        }
        if (c == ':' && i + 1 < n && ident_start(s[i + 1])) {
            const Token* p = prev_significant();
            if (p != nullptr && p->kind == TokKind::Punct && (p->text == "(" || p->text == ",")) {
                int b = i;
                ++i;
                while (i < n && ident_char(s[i])) ++i;
                out.push_back({TokKind::Symbol, s.substr(b, i - b), b, i});
                continue;
            }
        }
        if (std::string_view("(),:;=+-*").find(c) != std::string_view::npos) {
            out.push_back({TokKind::Punct, std::string(1, c), i, i + 1});
            ++i;
            continue;
        }
        if (strict) fail(i, std::string("unexpected character '") + c + "'");
        // Lenient path: hand the parser one unparsable token for the
        // rest of the line so statement recovery can take over.
        int b = i;
        while (i < n && s[i] != '\n') ++i;
        out.push_back({TokKind::Bad, s.substr(b, i - b), b, i});
    }
    out.push_back({TokKind::End, "", n, n});
    return out;
}

class MiniParser {
public:
    MiniParser(const std::string& src, bool strict) : src_(src), strict_(strict) {}

    SyntaxTree run() {
        toks_ = lex_mini(src_, strict_);
        int program = b_.make("program", 0, static_cast<int>(src_.size()));
        skip_newlines();
        bool any = false;
        while (!at(TokKind::End)) {
            int start = cur().begin;
            size_t mark = b_.tree.nodes.size();
            int stmt = -1;
            try {
                stmt = parse_statement();
                if (!at(TokKind::Newline) && !at(TokKind::End))
                    fail(cur().begin, "expected end of statement, got '" + cur().text + "'");
            } catch (const ParseError&) {
                if (strict_) throw;
                // Drop the half-built statement subtree before the
                // error leaf replaces it.
                b_.tree.nodes.resize(mark);
                stmt = recover_error_leaf(start);
            }
            b_.attach(program, stmt);
            any = true;
            skip_newlines();
        }
        if (!any) throw ParseError("source is empty");
        b_.tree.root = program;
        return std::move(b_.tree);
    }

private:
    const std::string& src_;
    bool strict_;
    std::vector<Token> toks_;
    int pos_ = 0;
    TreeBuilder b_;

    const Token& cur() const { return toks_[pos_]; }
    bool at(TokKind k) const { return cur().kind == k; }
    bool at_punct(const char* t) const { return at(TokKind::Punct) && cur().text == t; }

    void skip_newlines() {
        while (at(TokKind::Newline)) ++pos_;
    }

    int leaf(const char* kind) {
        const Token& t = cur();
        ++pos_;
        return b_.make(kind, t.begin, t.end, t.text);
    }

    int expect_punct(const char* t) {
        if (!at_punct(t)) fail(cur().begin, std::string("expected '") + t + "'");
        return leaf("punct");
    }

    // Panic recovery: swallow the rest of the line into one error leaf.
    int recover_error_leaf(int start) {
        while (!at(TokKind::Newline) && !at(TokKind::End)) ++pos_;
        int end = std::max(start, pos_ > 0 ? toks_[pos_ - 1].end : start);
        return b_.make("error", start, end, src_.substr(start, end - start));
    }

    int parse_statement() {
        if (at(TokKind::KwDef)) return parse_def();
        return parse_simple();
    }

    int parse_def() {
        int node = b_.make("def_stmt", cur().begin, cur().begin);
        b_.attach(node, leaf("keyword"));
        if (!at(TokKind::Ident)) fail(cur().begin, "expected function name after 'def'");
        b_.attach(node, leaf("ident"));
        b_.attach(node, parse_parameters());
        b_.attach(node, expect_punct(":"));
        b_.attach(node, parse_suite());
        return node;
    }

    int parse_parameters() {
        int node = b_.make("parameters", cur().begin, cur().begin);
        b_.attach(node, expect_punct("("));
        if (at(TokKind::Ident)) {
            b_.attach(node, leaf("ident"));
            while (at_punct(",")) {
                b_.attach(node, leaf("punct"));
                if (!at(TokKind::Ident)) fail(cur().begin, "expected parameter name");
                b_.attach(node, leaf("ident"));
            }
        }
        b_.attach(node, expect_punct(")"));
        return node;
    }

    int parse_suite() {
        int node = b_.make("suite", cur().begin, cur().begin);
        b_.attach(node, parse_simple());
        while (at_punct(";")) {
            b_.attach(node, leaf("punct"));
            b_.attach(node, parse_simple());
        }
        return node;
    }

    int parse_simple() {
        if (at(TokKind::Ident) && toks_[pos_ + 1].kind == TokKind::Punct &&
            toks_[pos_ + 1].text == "=") {
            int node = b_.make("assign", cur().begin, cur().begin);
            b_.attach(node, leaf("ident"));
            b_.attach(node, leaf("punct"));
            b_.attach(node, parse_expr());
            return node;
        }
        return parse_expr();
    }

    int parse_expr() {
        int left = parse_term();
        while (at_punct("+") || at_punct("-") || at_punct("*")) {
            int node = b_.make("binop", b_.tree.nodes[left].begin, b_.tree.nodes[left].begin);
            b_.attach(node, left);
            b_.attach(node, leaf("punct"));
            b_.attach(node, parse_term());
            left = node;
        }
        return left;
    }

    int parse_term() {
        if (at(TokKind::Ident)) {
            if (toks_[pos_ + 1].kind == TokKind::Punct && toks_[pos_ + 1].text == "(")
                return parse_call();
            return leaf("ident");
        }
        if (at(TokKind::Number)) return leaf("number");
        if (at(TokKind::Symbol)) return leaf("symbol");
        if (at_punct("(")) {
            int node = b_.make("paren_expr", cur().begin, cur().begin);
            b_.attach(node, leaf("punct"));
            b_.attach(node, parse_expr());
            b_.attach(node, expect_punct(")"));
            return node;
        }
        fail(cur().begin, "expected an expression, got '" + cur().text + "'");
    }

    int parse_call() {
        int node = b_.make("call", cur().begin, cur().begin);
        b_.attach(node, leaf("ident"));
        b_.attach(node, expect_punct("("));
        if (!at_punct(")")) {
            // The arguments node exists only when there are arguments, so
            // the tree never holds a childless internal node.
            int args = b_.make("arguments", cur().begin, cur().begin);
            b_.attach(args, parse_expr());
            while (at_punct(",")) {
                b_.attach(args, leaf("punct"));
                b_.attach(args, parse_expr());
            }
            b_.attach(node, args);
        }
        b_.attach(node, expect_punct(")"));
        return node;
    }
};

// ----------------------------------------------------------------- Toy

// S-expressions whose parens are leaves: atoms are runs of non-space,
// non-paren bytes; a list node owns its parens and elements.
class ToyParser {
public:
    ToyParser(const std::string& src, bool strict) : src_(src), strict_(strict) {}

    SyntaxTree run() {
        int program = b_.make("program", 0, static_cast<int>(src_.size()));
        skip_ws();
        bool any = false;
        while (pos_ < size()) {
            int start = pos_;
            size_t mark = b_.tree.nodes.size();
            int node = -1;
            try {
                node = parse_sexp();
            } catch (const ParseError&) {
                if (strict_) throw;
                b_.tree.nodes.resize(mark);
                pos_ = size();
                node = b_.make("error", start, pos_, src_.substr(start, pos_ - start));
            }
            b_.attach(program, node);
            any = true;
            skip_ws();
        }
        if (!any) throw ParseError("source is empty");
        b_.tree.root = program;
        return std::move(b_.tree);
    }

private:
    const std::string& src_;
    bool strict_;
    int pos_ = 0;
    TreeBuilder b_;

    int size() const { return static_cast<int>(src_.size()); }
    void skip_ws() {
        while (pos_ < size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }

    int parse_sexp() {
        if (src_[pos_] == ')') fail(pos_, "unmatched ')'");
        if (src_[pos_] == '(') {
            int node = b_.make("list", pos_, pos_);
            b_.attach(node, b_.make("punct", pos_, pos_ + 1, "("));
            ++pos_;
            skip_ws();
            while (pos_ < size() && src_[pos_] != ')') {
                b_.attach(node, parse_sexp());
                skip_ws();
            }
            if (pos_ >= size()) fail(pos_, "missing ')'");
            b_.attach(node, b_.make("punct", pos_, pos_ + 1, ")"));
            ++pos_;
            return node;
        }
        int b = pos_;
        while (pos_ < size() && !std::isspace(static_cast<unsigned char>(src_[pos_])) &&
               src_[pos_] != '(' && src_[pos_] != ')')
            ++pos_;
        return b_.make("atom", b, pos_, src_.substr(b, pos_ - b));
    }
};

}  // namespace

SyntaxTree parse(const SourceUnit& source, bool strict) {
    bool blank = std::all_of(source.text.begin(), source.text.end(), [](char c) {
        return std::isspace(static_cast<unsigned char>(c));
    });
    if (blank) throw ParseError("source is empty");
    switch (source.language) {
        case Language::Toy:
            return ToyParser(source.text, strict).run();
        case Language::Mini:
            return MiniParser(source.text, strict).run();
    }
    throw UnsupportedLanguage("unregistered language enumerator");
}

LeafTokenSequence extract_leaves(const SyntaxTree& tree) {
    LeafTokenSequence seq;
    // Iterative DFS in children order; depth tracked alongside.
    std::vector<std::pair<int, int>> stack{{tree.root, 0}};
    while (!stack.empty()) {
        auto [id, depth] = stack.back();
        stack.pop_back();
        const TreeNode& n = tree.nodes[id];
        if (n.children.empty()) {
            seq.tokens.push_back({n.text, n.begin, n.end, id, depth});
            continue;
        }
        for (auto it = n.children.rbegin(); it != n.children.rend(); ++it)
            stack.push_back({*it, depth + 1});
    }
    return seq;
}

namespace {

int lca(const SyntaxTree& tree, int u, int du, int v, int dv) {
    while (du > dv) {
        u = tree.nodes[u].parent;
        --du;
    }
    while (dv > du) {
        v = tree.nodes[v].parent;
        --dv;
    }
    while (u != v) {
        u = tree.nodes[u].parent;
        v = tree.nodes[v].parent;
    }
    return u;
}

}  // namespace

DistanceMatrix token_distance_matrix(const LeafTokenSequence& leaves, const SyntaxTree& tree) {
    int n = leaves.size();
    DistanceMatrix m(n, Granularity::Token);
    std::vector<int> node_depth(tree.nodes.size());
    for (size_t i = 0; i < tree.nodes.size(); ++i)
        node_depth[i] = tree.depth(static_cast<int>(i));
    for (int i = 0; i < n; ++i) {
        m.labels.push_back(leaves.tokens[i].text);
        for (int j = i + 1; j < n; ++j) {
            int u = leaves.tokens[i].node;
            int v = leaves.tokens[j].node;
            int du = node_depth[u];
            int dv = node_depth[v];
            int a = lca(tree, u, du, v, dv);
            int dist = du + dv - 2 * node_depth[a];
            m.at(i, j) = dist;
            m.at(j, i) = dist;
        }
    }
    return m;
}

DistanceMatrix bfs_distance_oracle(const SyntaxTree& tree) {
    LeafTokenSequence leaves = extract_leaves(tree);
    int n = leaves.size();
    int total = static_cast<int>(tree.nodes.size());

    std::vector<std::vector<int>> adj(total);
    for (int id = 0; id < total; ++id) {
        for (int c : tree.nodes[id].children) {
            adj[id].push_back(c);
            adj[c].push_back(id);
        }
    }
    std::vector<int> leaf_slot(total, -1);
    for (int i = 0; i < n; ++i) leaf_slot[leaves.tokens[i].node] = i;

    DistanceMatrix m(n, Granularity::Token);
    for (int i = 0; i < n; ++i) m.labels.push_back(leaves.tokens[i].text);
    std::vector<int> dist(total);
    for (int i = 0; i < n; ++i) {
        std::fill(dist.begin(), dist.end(), -1);
        std::deque<int> q{leaves.tokens[i].node};
        dist[leaves.tokens[i].node] = 0;
        while (!q.empty()) {
            int u = q.front();
            q.pop_front();
            for (int v : adj[u]) {
                if (dist[v] != -1) continue;
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
        for (int j = 0; j < n; ++j) m.at(i, j) = dist[leaves.tokens[j].node];
    }
    return m;
}

nlohmann::json to_json(const DistanceMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.n; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < m.n; ++j) row.push_back(m.at(i, j));
        rows.push_back(std::move(row));
    }
    return {{"tokens", m.labels},
            {"matrix", std::move(rows)},
            {"granularity", m.granularity == Granularity::Token ? "token" : "subtoken"}};
}

DistanceMatrix distance_matrix_from_json(const nlohmann::json& j) {
    const auto& rows = j.at("matrix");
    int n = static_cast<int>(rows.size());
    std::string g = j.at("granularity").get<std::string>();
    if (g != "token" && g != "subtoken")
        throw DimensionMismatch("granularity must be 'token' or 'subtoken'");
    DistanceMatrix m(n, g == "token" ? Granularity::Token : Granularity::Subtoken);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(rows[i].size()) != n)
            throw DimensionMismatch("distance matrix must be square");
        for (int jj = 0; jj < n; ++jj) m.at(i, jj) = rows[i][jj].get<int>();
    }
    m.labels = j.at("tokens").get<std::vector<std::string>>();
    if (static_cast<int>(m.labels.size()) != n)
        throw DimensionMismatch("token list length must match matrix size");
    return m;
}

}  // namespace sat
