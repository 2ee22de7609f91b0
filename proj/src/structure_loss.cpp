#include "sat/structure_loss.hpp"

#include <cmath>

#include "sat/errors.hpp"

namespace sat {

namespace {

Mat distance_values(const DistanceMatrix& d) {
    Mat m(d.n, d.n);
    for (size_t i = 0; i < d.d.size(); ++i) m.a[i] = static_cast<double>(d.d[i]);
    return m;
}

}  // namespace

void validate(const StructureLossConfig& cfg) {
    if (!(cfg.alpha >= 0.0)) throw InvalidInput("alpha must be non-negative");
    if (cfg.layer_index < 0) throw InvalidInput("layer_index must be non-negative");
}

Mat encode_distance(const DistanceMatrix& d, const StructureEncoder& enc) {
    Mat m = distance_values(d);
    for (double& v : m.a) v = enc.w * v + enc.b;
    return m;
}

std::vector<double> per_head_structure_loss(const AttentionTensor& attn, const DistanceMatrix& d,
                                            const StructureEncoder& enc,
                                            const SinkhornConfig& cfg) {
    PointCloud target = cloud_from_rows(encode_distance(d, enc));
    std::vector<double> losses;
    losses.reserve(attn.heads.size());
    for (const Mat& head : attn.heads) {
        if (head.rows != d.n || head.cols != d.n)
            throw ShapeMismatch("attention head must match the distance matrix size");
        losses.push_back(sinkhorn_divergence(cloud_from_rows(head), target, cfg).value);
    }
    return losses;
}

double structure_loss(const std::vector<double>& per_head) {
    if (per_head.empty()) throw EmptyHeads("head average needs at least one head");
    double total = 0.0;
    for (double v : per_head) total += v;
    return total / static_cast<double>(per_head.size());
}

LossBreakdown combine_losses(double task_loss, double structure_loss_value, double alpha) {
    LossBreakdown out;
    out.task_loss = task_loss;
    out.structure_loss = structure_loss_value;
    out.total = task_loss + alpha * structure_loss_value;
    return out;
}

nlohmann::json to_json(const LossBreakdown& breakdown, double alpha) {
    return {{"task", breakdown.task_loss},
            {"per_head", breakdown.per_head},
            {"structure", breakdown.structure_loss},
            {"alpha", alpha},
            {"total", breakdown.total}};
}

Var encode_distance_var(Tape& t, const DistanceMatrix& d, Var w, Var b) {
    return t.affine_scalar(t.leaf(distance_values(d)), w, b);
}

StructureLossVars structure_loss_var(Tape& t, const std::vector<Var>& heads,
                                     const DistanceMatrix& d, Var w, Var b,
                                     const SinkhornConfig& cfg) {
    if (heads.empty()) throw EmptyHeads("head average needs at least one head");
    Var encoded = encode_distance_var(t, d, w, b);
    std::vector<double> uniform(static_cast<size_t>(d.n), 1.0 / d.n);

    StructureLossVars out;
    Var acc{};
    for (size_t i = 0; i < heads.size(); ++i) {
        const Mat& head = t.value(heads[i]);
        if (head.rows != d.n || head.cols != d.n)
            throw ShapeMismatch("attention head must match the distance matrix size");
        SinkhornVarResult r = sinkhorn_divergence_var(t, heads[i], encoded, uniform, uniform, cfg);
        out.converged = out.converged && r.converged;
        out.per_head.push_back(r.value);
        acc = i == 0 ? r.value : t.add(acc, r.value);
    }
    out.mean = t.scale(acc, 1.0 / static_cast<double>(heads.size()));
    return out;
}

}  // namespace sat
