#include "sat/alignment.hpp"

#include <cctype>

#include "sat/errors.hpp"

namespace sat {

namespace {

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)); }
bool upper(char c) { return std::isupper(static_cast<unsigned char>(c)); }
bool lower_or_digit(char c) {
    return std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c));
}

// Splits one token: non-alphanumeric bytes stand alone (this covers
// underscores and punctuation), and alphanumeric runs break at camel
// boundaries: aB -> a|B, ABc -> A|Bc.
std::vector<std::string> split_token(const std::string& s) {
    std::vector<std::string> parts;
    size_t i = 0;
    while (i < s.size()) {
        if (!word_char(s[i])) {
            parts.push_back(std::string(1, s[i]));
            ++i;
            continue;
        }
        size_t b = i;
        ++i;
        while (i < s.size() && word_char(s[i])) {
            bool rise = lower_or_digit(s[i - 1]) && upper(s[i]);
            bool acronym_end =
                upper(s[i - 1]) && upper(s[i]) && i + 1 < s.size() && std::islower(
                    static_cast<unsigned char>(s[i + 1]));
            if (rise || acronym_end) break;
            ++i;
        }
        parts.push_back(s.substr(b, i - b));
    }
    return parts;
}

}  // namespace

SubtokenSequence subtokenize(const LeafTokenSequence& leaves, TokenizerScheme scheme,
                             bool with_markers) {
    (void)scheme;  // single registered scheme; the switch point is the signature
    SubtokenSequence out;
    if (with_markers) {
        out.specials.push_back(0);
        out.subtokens.push_back({kSeqStart, -1});
    }
    for (int t = 0; t < leaves.size(); ++t)
        for (std::string& part : split_token(leaves.tokens[t].text))
            out.subtokens.push_back({std::move(part), t});
    if (with_markers) {
        out.specials.push_back(out.size());
        out.subtokens.push_back({kSeqEnd, -1});
    }
    return out;
}

AlignmentMap align(const SubtokenSequence& subtokens, const LeafTokenSequence& leaves) {
    AlignmentMap map;
    map.subtoken_to_token.assign(subtokens.size(), -1);
    int token = 0;
    size_t consumed = 0;  // bytes of the current token matched so far
    for (int i = 0; i < subtokens.size(); ++i) {
        if (subtokens.is_special(i)) continue;
        const std::string& piece = subtokens.subtokens[i].text;
        if (token >= leaves.size())
            throw AlignmentError("subtokens continue past the last token");
        const std::string& text = leaves.tokens[token].text;
        if (text.compare(consumed, piece.size(), piece) != 0)
            throw AlignmentError("subtoken '" + piece + "' diverges from token '" + text + "'");
        map.subtoken_to_token[i] = token;
        consumed += piece.size();
        if (consumed == text.size()) {
            ++token;
            consumed = 0;
        }
    }
    if (consumed != 0)
        throw AlignmentError("token '" + leaves.tokens[token].text + "' left unfinished");
    if (token != leaves.size())
        throw AlignmentError("subtokens ended before covering every token");
    return map;
}

DistanceMatrix expand_distance_matrix(const DistanceMatrix& d, const SubtokenSequence& subtokens,
                                      const AlignmentMap& map) {
    if (d.granularity != Granularity::Token)
        throw DimensionMismatch("expansion expects a token-level matrix");
    if (map.size() != subtokens.size())
        throw DimensionMismatch("alignment length must match subtoken count");

    std::vector<int> owners;
    std::vector<std::string> labels;
    for (int i = 0; i < subtokens.size(); ++i) {
        if (subtokens.is_special(i)) continue;
        int t = map.subtoken_to_token[i];
        if (t < 0 || t >= d.n)
            throw DimensionMismatch("alignment refers to a token outside the matrix");
        owners.push_back(t);
        labels.push_back(subtokens.subtokens[i].text);
    }

    int s = static_cast<int>(owners.size());
    DistanceMatrix out(s, Granularity::Subtoken);
    out.labels = std::move(labels);
    for (int p = 0; p < s; ++p)
        for (int q = 0; q < s; ++q) out.at(p, q) = d.at(owners[p], owners[q]);
    return out;
}

std::pair<SubtokenSequence, AlignmentMap> truncate(const SubtokenSequence& subtokens,
                                                   const AlignmentMap& map, int max_len) {
    if (max_len < 1) throw DimensionMismatch("max_len must be positive");
    if (map.size() != subtokens.size())
        throw DimensionMismatch("alignment length must match subtoken count");
    SubtokenSequence out;
    AlignmentMap kept;
    int content = 0;
    for (int i = 0; i < subtokens.size(); ++i) {
        bool special = subtokens.is_special(i);
        if (!special && content >= max_len) continue;
        if (!special) ++content;
        if (special) out.specials.push_back(out.size());
        out.subtokens.push_back(subtokens.subtokens[i]);
        kept.subtoken_to_token.push_back(map.subtoken_to_token[i]);
    }
    return {std::move(out), std::move(kept)};
}

nlohmann::json to_json(const SubtokenSequence& subtokens, const AlignmentMap& map) {
    nlohmann::json texts = nlohmann::json::array();
    nlohmann::json owners = nlohmann::json::array();
    for (int i = 0; i < subtokens.size(); ++i) {
        texts.push_back(subtokens.subtokens[i].text);
        if (map.subtoken_to_token[i] < 0)
            owners.push_back(nullptr);
        else
            owners.push_back(map.subtoken_to_token[i]);
    }
    return {{"subtokens", std::move(texts)}, {"owner", std::move(owners)}};
}

}  // namespace sat
