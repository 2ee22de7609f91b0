#pragma once

#include <vector>

#include <json.hpp>

#include "sat/attention.hpp"
#include "sat/harness.hpp"
#include "sat/matrix.hpp"
#include "sat/nano_model.hpp"
#include "sat/syntax.hpp"

namespace sat {

enum class HeadReduction { Mean, PerHead };

// Thresholds of -1 are resolved per instance: the attention cutoff
// becomes 1/n (the uniform level) and the distance cutoff the upper
// median of the off-diagonal tree distances. Explicit values must sit
// in (0,1) and >= 1 respectively.
struct ProbeConfig {
    double theta_a = -1.0;
    int theta_d = -1;
    int layer_index = 0;
    HeadReduction head_reduction = HeadReduction::Mean;
};

void validate(const ProbeConfig& cfg);
nlohmann::json to_json(const ProbeConfig& cfg);
ProbeConfig probe_config_from_json(const nlohmann::json& j);

double resolve_theta_a(const ProbeConfig& cfg, int n);
int resolve_theta_d(const ProbeConfig& cfg, const DistanceMatrix& d);

// Indicator matrices: attn holds 1.0 where the attention weight lies
// strictly above the cutoff, dist where the tree distance lies strictly
// below its cutoff.
struct BinaryPair {
    Mat attn;
    Mat dist;
};

BinaryPair binarize(const Mat& attn, const DistanceMatrix& d, const ProbeConfig& cfg);

// Fraction of off-diagonal cells where the two indicators agree.
// A single-row pair has no off-diagonal cells and scores 1.
double agreement(const BinaryPair& p);

// Agreement between thresholded attention and thresholded closeness,
// reduced over heads per the config: Mean averages the heads before
// thresholding, PerHead averages the per-head agreement fractions.
double cat_score(const AttentionTensor& attn, const DistanceMatrix& d, const ProbeConfig& cfg);

struct ProbeReport {
    ProbeConfig config;
    std::vector<double> scores;  // one per example, each in [0,1]
    double mean = 0.0;
};

nlohmann::json to_json(const ProbeReport& r);

// Scores a model over encoded examples: runs the forward pass, taps
// post-softmax attention at the configured layer, strips the marker
// rows and columns, and scores each example against its distances.
ProbeReport probe_model(const Model& model, const std::vector<EncodedExample>& examples,
                        const ProbeConfig& cfg);

// Rebuilds the model a training checkpoint describes, restores its
// parameters, and probes it over the examples.
ProbeReport probe_checkpoint(const nlohmann::json& checkpoint,
                             const std::vector<EncodedExample>& examples,
                             const ProbeConfig& cfg);

}  // namespace sat
