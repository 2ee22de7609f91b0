#include "sat/probe.hpp"

#include <algorithm>
#include <string>

#include "sat/errors.hpp"
#include "sat/tape.hpp"

namespace sat {

void validate(const ProbeConfig& cfg) {
    bool auto_a = cfg.theta_a == -1.0;
    if (!auto_a && (cfg.theta_a <= 0.0 || cfg.theta_a >= 1.0))
        throw InvalidInput("attention threshold must be -1 or inside (0,1)");
    if (cfg.theta_d != -1 && cfg.theta_d < 1)
        throw InvalidInput("distance threshold must be -1 or a positive integer");
    if (cfg.layer_index < 0) throw InvalidInput("layer index must be nonnegative");
}

nlohmann::json to_json(const ProbeConfig& cfg) {
    return {{"theta_a", cfg.theta_a},
            {"theta_d", cfg.theta_d},
            {"layer_index", cfg.layer_index},
            {"head_reduction", cfg.head_reduction == HeadReduction::Mean ? "mean" : "per_head"}};
}

ProbeConfig probe_config_from_json(const nlohmann::json& j) {
    ProbeConfig cfg;
    cfg.theta_a = j.value("theta_a", cfg.theta_a);
    cfg.theta_d = j.value("theta_d", cfg.theta_d);
    cfg.layer_index = j.value("layer_index", cfg.layer_index);
    if (j.contains("head_reduction")) {
        std::string r = j.at("head_reduction").get<std::string>();
        if (r == "mean") cfg.head_reduction = HeadReduction::Mean;
        else if (r == "per_head") cfg.head_reduction = HeadReduction::PerHead;
        else throw InvalidInput("unknown head reduction '" + r + "'");
    }
    validate(cfg);
    return cfg;
}

double resolve_theta_a(const ProbeConfig& cfg, int n) {
    if (cfg.theta_a != -1.0) return cfg.theta_a;
    return 1.0 / std::max(n, 1);
}

int resolve_theta_d(const ProbeConfig& cfg, const DistanceMatrix& d) {
    if (cfg.theta_d != -1) return cfg.theta_d;
    std::vector<int> off;
    off.reserve(static_cast<size_t>(d.n) * std::max(d.n - 1, 0));
    for (int i = 0; i < d.n; ++i)
        for (int j = 0; j < d.n; ++j)
            if (i != j) off.push_back(d.at(i, j));
    if (off.empty()) return 1;
    std::sort(off.begin(), off.end());
    return off[off.size() / 2];
}

BinaryPair binarize(const Mat& attn, const DistanceMatrix& d, const ProbeConfig& cfg) {
    if (attn.rows != d.n || attn.cols != d.n)
        throw ShapeMismatch("attention is " + std::to_string(attn.rows) + "x" +
                            std::to_string(attn.cols) + " but distances are " +
                            std::to_string(d.n) + "x" + std::to_string(d.n));
    double ta = resolve_theta_a(cfg, d.n);
    int td = resolve_theta_d(cfg, d);
    BinaryPair out{Mat(d.n, d.n), Mat(d.n, d.n)};
    for (int i = 0; i < d.n; ++i) {
        for (int j = 0; j < d.n; ++j) {
            out.attn(i, j) = attn(i, j) > ta ? 1.0 : 0.0;
            out.dist(i, j) = d.at(i, j) < td ? 1.0 : 0.0;
        }
    }
    return out;
}

double agreement(const BinaryPair& p) {
    int n = p.attn.rows;
    if (n <= 1) return 1.0;
    int agree = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && (p.attn(i, j) != 0.0) == (p.dist(i, j) != 0.0)) ++agree;
    return static_cast<double>(agree) / (static_cast<double>(n) * (n - 1));
}

double cat_score(const AttentionTensor& attn, const DistanceMatrix& d, const ProbeConfig& cfg) {
    if (attn.heads.empty()) throw EmptyHeads("probing needs at least one attention head");
    if (cfg.head_reduction == HeadReduction::Mean) {
        Mat avg = attn.heads[0];
        for (size_t h = 1; h < attn.heads.size(); ++h) {
            const Mat& m = attn.heads[h];
            if (m.rows != avg.rows || m.cols != avg.cols)
                throw ShapeMismatch("attention heads disagree on shape");
            for (size_t k = 0; k < avg.a.size(); ++k) avg.a[k] += m.a[k];
        }
        double inv = 1.0 / static_cast<double>(attn.heads.size());
        for (double& v : avg.a) v *= inv;
        return agreement(binarize(avg, d, cfg));
    }
    double sum = 0.0;
    for (const Mat& h : attn.heads) sum += agreement(binarize(h, d, cfg));
    return sum / static_cast<double>(attn.heads.size());
}

ProbeReport probe_model(const Model& model, const std::vector<EncodedExample>& examples,
                        const ProbeConfig& cfg) {
    validate(cfg);
    ProbeReport report;
    report.config = cfg;
    double sum = 0.0;
    for (const EncodedExample& ex : examples) {
        Tape t;
        ForwardResult f = model.forward(t, ex.ids);
        AttentionTensor attn = attention_tensor(t, f, cfg.layer_index, AttentionForm::PostSoftmax);
        for (Mat& h : attn.heads) h = content_block(h);
        double s = cat_score(attn, ex.distances, cfg);
        report.scores.push_back(s);
        sum += s;
    }
    report.mean = report.scores.empty() ? 0.0 : sum / static_cast<double>(report.scores.size());
    return report;
}

ProbeReport probe_checkpoint(const nlohmann::json& checkpoint,
                             const std::vector<EncodedExample>& examples,
                             const ProbeConfig& cfg) {
    ModelConfig mc = checkpoint_config(checkpoint);
    ParamStore ps;
    Model model(mc, ps);
    ps.add("encoder.w", Mat(1, 1));
    ps.add("encoder.b", Mat(1, 1));
    load_params(checkpoint, ps);
    return probe_model(model, examples, cfg);
}

nlohmann::json to_json(const ProbeReport& r) {
    return {{"config", to_json(r.config)}, {"scores", r.scores}, {"mean", r.mean}};
}

}  // namespace sat
