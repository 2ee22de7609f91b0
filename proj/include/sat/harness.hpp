#pragma once

#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sat/nano_model.hpp"
#include "sat/sinkhorn.hpp"
#include "sat/structure_loss.hpp"
#include "sat/syntax.hpp"

namespace sat {

struct Example {
    SourceUnit source;
    std::vector<std::string> target;  // normalized content subtokens
};

// Snippets plus disjoint train/valid/test index splits. Every source is
// strict-parseable by construction.
struct Corpus {
    std::vector<Example> examples;
    std::vector<int> train, valid, test;
};

// Deterministic generator of small function definitions with varied
// identifiers, arities and nesting. Splits 80/10/10.
Corpus build_toy_corpus(int n, unsigned seed);

// Uniform without-replacement subset of the train split; valid/test are
// untouched. Subsets are nested: a lower rate under the same seed picks
// a prefix of the same shuffled order.
Corpus subsample(const Corpus& corpus, double rate, unsigned seed);

inline constexpr int kPadId = 0;
inline constexpr int kStartId = 1;
inline constexpr int kEndId = 2;
inline constexpr int kMaskId = 3;
inline constexpr int kUnkId = 4;

// Five reserved ids, then the train split's subtoken inventory in
// sorted order.
struct Vocab {
    std::vector<std::string> items;
    int id_of(const std::string& s) const;  // kUnkId when absent
    int size() const { return static_cast<int>(items.size()); }
};

Vocab build_vocab(const Corpus& corpus);

// A source ready for the model: marker-bracketed ids and the matching
// content-only distance matrix.
struct EncodedExample {
    std::vector<int> ids;              // <s> content... </s>
    DistanceMatrix distances;          // content x content
    std::vector<std::string> content;  // reference strings
};

EncodedExample encode_example(const SourceUnit& source, const Vocab& vocab, int max_content);

// Strips the first and last row and column, the marker positions a
// forward pass adds around the content block.
Mat content_block(const Mat& a);

struct MaskedSample {
    std::vector<int> ids;      // input with masked positions
    std::vector<int> targets;  // original id at masked positions, else -1
};

// Masks each content position with the given rate, at least one.
MaskedSample corrupt(const EncodedExample& ex, std::mt19937& rng, double mask_rate);

struct RunConfig {
    ModelConfig model;
    StructureLossConfig sat;
    SinkhornConfig sinkhorn;
    double lr = 0.05;
    double momentum = 0.0;
    // Learning-rate multiplier for the two structure-encoder parameters.
    // Left at 1.0 the encoder parks at the flat point (w near 0, b near
    // the mean attention level) and stops feeding structural gradient to
    // the model; the amplified rate carries it through to the basin with
    // w < 0, where near tokens receive the high target values.
    double encoder_lr_scale = 30.0;
    // L2-norm cap on the encoder gradient pair, applied before the
    // scale; 0 disables. The encoder objective is near-quadratic with
    // curvature of order n^2, so unclipped amplified steps diverge.
    double encoder_grad_clip = 0.03;
    int steps = 1500;
    int batch_size = 8;
    int eval_every = 0;  // 0: evaluate only at the end
    double mask_rate = 0.15;
    double sample_rate = 1.0;
    unsigned seed = 1;
};

void validate(const RunConfig& run);
nlohmann::json to_json(const RunConfig& run);
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SinkhornConfig& cfg);
SinkhornConfig sinkhorn_config_from_json(const nlohmann::json& j);

struct TrainRecord {
    int step = 0;
    double task_loss = 0.0;
    double structure_loss = 0.0;
    double total_loss = 0.0;  // task + alpha*structure, by construction
    double encoder_w = 1.0;   // after this step's update
    double encoder_b = 0.0;
    bool sinkhorn_converged = true;
    bool has_eval = false;
    double bleu = 0.0;
    double exact = 0.0;
};

nlohmann::json to_json(const TrainRecord& rec);

struct TrainResult {
    std::vector<TrainRecord> records;
    nlohmann::json checkpoint;  // model params + encoder, reloadable
    StructureEncoder encoder;   // final (w, b)
    double final_bleu = 0.0;    // test split
    double final_exact = 0.0;
    bool all_converged = true;
};

// One full run: subsamples per the config, trains the model jointly
// with the structure encoder, and evaluates on the held-out test split.
// The alpha = 0 path still reports the structure loss per step, computed
// outside the gradient graph, and draws the same random streams, so a
// pair of runs differing only in alpha sees identical data.
TrainResult train(const RunConfig& run, const Corpus& corpus);

// Mean metrics of greedy masked reconstruction over a split.
struct EvalMetrics {
    double bleu = 0.0;
    double exact = 0.0;
};

// Geometric mean of 1..4-gram precisions, add-one smoothed on zero
// counts, times the brevity penalty, scaled to [0, 100].
double smoothed_bleu4(const std::vector<std::string>& hypothesis,
                      const std::vector<std::string>& reference);

double exact_match(const std::vector<std::string>& hypothesis,
                   const std::vector<std::string>& reference);

// metrics.jsonl (one record per line), summary.json (config echo plus
// final metrics), checkpoint.json. Files are written to a temp name and
// renamed into place.
void write_run_outputs(const TrainResult& result, const RunConfig& run, const std::string& dir);

}  // namespace sat
