#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>
#include <vector>

#include "sat/alignment.hpp"
#include "sat/errors.hpp"
#include "sat/syntax.hpp"

using namespace sat;

namespace {

LeafTokenSequence leaves_of(const std::string& text, Language lang = Language::Mini) {
    return extract_leaves(parse({text, lang}));
}

std::vector<std::string> texts_of(const SubtokenSequence& s) {
    std::vector<std::string> out;
    for (const auto& st : s.subtokens) out.push_back(st.text);
    return out;
}

// Subtokens of a single isolated token, markers off.
std::vector<std::string> split_one(const std::string& token) {
    LeafTokenSequence seq;
    seq.tokens.push_back({token, 0, static_cast<int>(token.size()), 0, 1});
    return texts_of(subtokenize(seq, TokenizerScheme::RuleBased, false));
}

}  // namespace

TEST_CASE("identifiers split at underscores and camel boundaries") {
    CHECK(split_one("render_body") == std::vector<std::string>{"render", "_", "body"});
    CHECK(split_one("(") == std::vector<std::string>{"("});
    CHECK(split_one("parseHTTPResponse") == std::vector<std::string>{"parse", "HTTP", "Response"});
    CHECK(split_one(":partial") == std::vector<std::string>{":", "partial"});
    CHECK(split_one("x") == std::vector<std::string>{"x"});
    CHECK(split_one("value42") == std::vector<std::string>{"value42"});
    CHECK(split_one("camelCase") == std::vector<std::string>{"camel", "Case"});
    CHECK(split_one("__init__") == std::vector<std::string>{"_", "_", "init", "_", "_"});
}

TEST_CASE("subtoken concatenation reproduces each token") {
    LeafTokenSequence leaves = leaves_of("def render_body(name): render(:partial, name)");
    SubtokenSequence subs = subtokenize(leaves);
    AlignmentMap map = align(subs, leaves);

    std::vector<std::string> rebuilt(leaves.size());
    for (int i = 0; i < subs.size(); ++i)
        if (map.subtoken_to_token[i] >= 0) rebuilt[map.subtoken_to_token[i]] += subs.subtokens[i].text;
    for (int t = 0; t < leaves.size(); ++t) CHECK(rebuilt[t] == leaves.tokens[t].text);
}

TEST_CASE("all subtokens of one token share its index") {
    LeafTokenSequence leaves = leaves_of("def render_body(name): render(:partial, name)");
    SubtokenSequence subs = subtokenize(leaves);
    AlignmentMap map = align(subs, leaves);

    // Token 1 is "render_body"; its three pieces are consecutive.
    std::vector<int> owners;
    for (int i = 0; i < subs.size(); ++i)
        if (map.subtoken_to_token[i] == 1) owners.push_back(i);
    REQUIRE(owners.size() == 3);
    CHECK(subs.subtokens[owners[0]].text == "render");
    CHECK(subs.subtokens[owners[1]].text == "_");
    CHECK(subs.subtokens[owners[2]].text == "body");
}

TEST_CASE("sequence markers map to nothing") {
    LeafTokenSequence leaves = leaves_of("x");
    SubtokenSequence subs = subtokenize(leaves);
    REQUIRE(subs.size() == 3);
    CHECK(subs.subtokens.front().text == kSeqStart);
    CHECK(subs.subtokens.back().text == kSeqEnd);
    AlignmentMap map = align(subs, leaves);
    CHECK(map.subtoken_to_token == std::vector<int>{-1, 0, -1});

    // A markers-only sequence aligns against an empty token list.
    LeafTokenSequence none;
    SubtokenSequence only_markers = subtokenize(none);
    AlignmentMap empty = align(only_markers, none);
    CHECK(empty.subtoken_to_token == std::vector<int>{-1, -1});
}

TEST_CASE("alignment round-trips over assorted snippets") {
    std::vector<std::string> snippets = {
        "def parseHTTPResponse(raw_bytes): decode(raw_bytes)",
        "a = b + c * inner_product(x1, y2)",
        "emit(:json, payload_id)",
        "def f(): pass",
    };
    for (const auto& text : snippets) {
        LeafTokenSequence leaves = leaves_of(text);
        SubtokenSequence subs = subtokenize(leaves);
        AlignmentMap map = align(subs, leaves);
        // Total over content subtokens and surjective onto tokens.
        std::vector<bool> hit(leaves.size(), false);
        for (int i = 0; i < subs.size(); ++i) {
            if (subs.is_special(i)) {
                CHECK(map.subtoken_to_token[i] == -1);
            } else {
                REQUIRE(map.subtoken_to_token[i] >= 0);
                hit[map.subtoken_to_token[i]] = true;
            }
        }
        for (bool h : hit) CHECK(h);
    }
}

TEST_CASE("corrupted subtoken text is rejected") {
    LeafTokenSequence leaves = leaves_of("def f(): pass");
    SubtokenSequence subs = subtokenize(leaves);
    subs.subtokens[1].text = "zzz";
    CHECK_THROWS_AS((void)align(subs, leaves), AlignmentError);

    SubtokenSequence short_seq = subtokenize(leaves);
    short_seq.subtokens.pop_back();  // drop the end marker
    short_seq.subtokens.pop_back();  // and the final token piece
    short_seq.specials.pop_back();
    CHECK_THROWS_AS((void)align(short_seq, leaves), AlignmentError);
}

TEST_CASE("expansion copies owning-token distances to subtoken pairs") {
    LeafTokenSequence leaves = leaves_of("def render_body(name): render(:partial, name)");
    SyntaxTree tree = parse({"def render_body(name): render(:partial, name)", Language::Mini});
    DistanceMatrix d = token_distance_matrix(leaves, tree);
    SubtokenSequence subs = subtokenize(leaves);
    AlignmentMap map = align(subs, leaves);
    DistanceMatrix e = expand_distance_matrix(d, subs, map);

    CHECK(e.granularity == Granularity::Subtoken);
    REQUIRE(e.n == subs.content_size());
    REQUIRE(e.labels[1] == "render");
    REQUIRE(e.labels[10] == ":");
    REQUIRE(e.labels[11] == "partial");

    // "render" belongs to "render_body" and ":" to ":partial"; those
    // tokens sit five edges apart, so the subtokens inherit 5.
    CHECK(e.at(1, 10) == 5);
    // Pieces of one token are at distance zero from each other.
    CHECK(e.at(1, 2) == 0);
    CHECK(e.at(2, 3) == 0);

    // Symmetric, zero diagonal, block-constant over owning-token pairs.
    std::vector<int> owners;
    for (int i = 0; i < subs.size(); ++i)
        if (!subs.is_special(i)) owners.push_back(map.subtoken_to_token[i]);
    for (int p = 0; p < e.n; ++p) {
        CHECK(e.at(p, p) == 0);
        for (int q = 0; q < e.n; ++q) {
            CHECK(e.at(p, q) == e.at(q, p));
            CHECK(e.at(p, q) == d.at(owners[p], owners[q]));
        }
    }
}

TEST_CASE("truncation keeps a prefix of content and both markers") {
    LeafTokenSequence leaves = leaves_of("def render_body(name): render(:partial, name)");
    SyntaxTree tree = parse({"def render_body(name): render(:partial, name)", Language::Mini});
    DistanceMatrix d = token_distance_matrix(leaves, tree);
    SubtokenSequence subs = subtokenize(leaves);
    AlignmentMap map = align(subs, leaves);

    auto [same, same_map] = truncate(subs, map, 500);
    CHECK(texts_of(same) == texts_of(subs));
    CHECK(same_map.subtoken_to_token == map.subtoken_to_token);

    auto [one, one_map] = truncate(subs, map, 1);
    CHECK(texts_of(one) == std::vector<std::string>{kSeqStart, "def", kSeqEnd});
    CHECK(one_map.subtoken_to_token == std::vector<int>{-1, 0, -1});

    // Expansion of a truncation equals the leading block of the full
    // expansion, including when a token is cut mid-way.
    DistanceMatrix full = expand_distance_matrix(d, subs, map);
    for (int keep : {2, 3, 7, 11}) {
        auto [cut, cut_map] = truncate(subs, map, keep);
        DistanceMatrix part = expand_distance_matrix(d, cut, cut_map);
        REQUIRE(part.n == keep);
        for (int p = 0; p < part.n; ++p)
            for (int q = 0; q < part.n; ++q) CHECK(part.at(p, q) == full.at(p, q));
    }

    CHECK_THROWS_AS((void)truncate(subs, map, 0), DimensionMismatch);
}

TEST_CASE("alignment serializes with nulls for markers") {
    LeafTokenSequence leaves = leaves_of("f(x)");
    SubtokenSequence subs = subtokenize(leaves);
    AlignmentMap map = align(subs, leaves);
    nlohmann::json j = to_json(subs, map);
    CHECK(j.at("subtokens").size() == j.at("owner").size());
    CHECK(j.at("owner").front().is_null());
    CHECK(j.at("owner").back().is_null());
    CHECK(j.at("owner")[1] == 0);
}
