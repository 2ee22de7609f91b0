#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sat/syntax.hpp"

namespace sat {

// Deterministic subtokenizers. RuleBased splits identifiers at
// underscores and camel-case boundaries and emits every punctuation
// byte as its own subtoken; delimiters are kept, so concatenating a
// token's subtokens reproduces the token text exactly.
enum class TokenizerScheme { RuleBased };

inline const std::string kSeqStart = "<s>";
inline const std::string kSeqEnd = "</s>";

struct Subtoken {
    std::string text;
    int owner = -1;  // owning token index; -1 for special markers
};

struct SubtokenSequence {
    std::vector<Subtoken> subtokens;
    std::vector<int> specials;  // positions of sequence markers

    int size() const { return static_cast<int>(subtokens.size()); }
    bool is_special(int i) const { return subtokens[i].owner < 0; }
    int content_size() const { return size() - static_cast<int>(specials.size()); }
};

// Per-subtoken owning-token index, -1 for specials.
struct AlignmentMap {
    std::vector<int> subtoken_to_token;
    int size() const { return static_cast<int>(subtoken_to_token.size()); }
};

// Splits every leaf token into subtokens, bracketed by sequence markers
// when with_markers is set.
SubtokenSequence subtokenize(const LeafTokenSequence& leaves,
                             TokenizerScheme scheme = TokenizerScheme::RuleBased,
                             bool with_markers = true);

// Two-cursor sweep re-deriving which token each subtoken belongs to by
// accumulating subtoken text against the token sequence. Throws
// AlignmentError if the concatenation diverges or leaves a token
// unfinished.
AlignmentMap align(const SubtokenSequence& subtokens, const LeafTokenSequence& leaves);

// Lifts a token-level distance matrix to subtoken granularity: entry
// (p,q) is the distance between the owning tokens. Specials carry no
// distance, so the result covers content subtokens only, in order.
DistanceMatrix expand_distance_matrix(const DistanceMatrix& d, const SubtokenSequence& subtokens,
                                      const AlignmentMap& map);

// Keeps the first max_len content subtokens (markers always survive)
// and restricts the alignment accordingly.
std::pair<SubtokenSequence, AlignmentMap> truncate(const SubtokenSequence& subtokens,
                                                   const AlignmentMap& map, int max_len);

nlohmann::json to_json(const SubtokenSequence& subtokens, const AlignmentMap& map);

}  // namespace sat
