#pragma once

#include <vector>

#include <json.hpp>

#include "sat/attention.hpp"
#include "sat/sinkhorn.hpp"
#include "sat/syntax.hpp"
#include "sat/tape.hpp"

namespace sat {

// Learnable affine bridge between integer tree distances and the scale
// of attention values: two scalars applied elementwise.
struct StructureEncoder {
    double w = 1.0;
    double b = 0.0;
};

enum class AttentionForm { PostSoftmax, PreSoftmax };

struct StructureLossConfig {
    double alpha = 0.1;  // weight of the structure term in the total loss
    int layer_index = 0;  // which layer's attention is compared
    AttentionForm attention_form = AttentionForm::PostSoftmax;
};

void validate(const StructureLossConfig& cfg);

struct LossBreakdown {
    double task_loss = 0.0;
    std::vector<double> per_head;
    double structure_loss = 0.0;
    double total = 0.0;
};

// Elementwise w*d + b.
Mat encode_distance(const DistanceMatrix& d, const StructureEncoder& enc);

// One divergence per head between the head's attention rows and the
// encoded distance rows, both read as uniform point clouds.
std::vector<double> per_head_structure_loss(const AttentionTensor& attn, const DistanceMatrix& d,
                                            const StructureEncoder& enc,
                                            const SinkhornConfig& cfg);

// Arithmetic mean over heads; rejects an empty list.
double structure_loss(const std::vector<double>& per_head);

// total = task + alpha * structure, as written, so the identity is
// exact in floating point.
LossBreakdown combine_losses(double task_loss, double structure_loss_value, double alpha);

nlohmann::json to_json(const LossBreakdown& breakdown, double alpha);

// Differentiable path used during training. Heads are n x n vars on
// the tape; w and b are 1x1 vars (the encoder parameters).
Var encode_distance_var(Tape& t, const DistanceMatrix& d, Var w, Var b);

struct StructureLossVars {
    std::vector<Var> per_head;  // 1x1 each
    Var mean;                   // 1x1
    bool converged = true;      // all sinkhorn solves converged
};
StructureLossVars structure_loss_var(Tape& t, const std::vector<Var>& heads,
                                     const DistanceMatrix& d, Var w, Var b,
                                     const SinkhornConfig& cfg);

}  // namespace sat
