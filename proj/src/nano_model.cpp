#include "sat/nano_model.hpp"

#include <cmath>
#include <random>
#include <utility>

#include "sat/errors.hpp"

namespace sat {

void validate(const ModelConfig& cfg) {
    if (cfg.vocab_size <= 0 || cfg.d_model <= 0 || cfg.n_heads <= 0 || cfg.n_layers <= 0 ||
        cfg.d_ff <= 0 || cfg.max_len <= 0)
        throw InvalidInput("model sizes must be positive");
    if (cfg.d_model % cfg.n_heads != 0)
        throw InvalidInput("d_model must divide evenly across heads");
}

nlohmann::json to_json(const ModelConfig& cfg) {
    return {{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
            {"n_heads", cfg.n_heads},      {"n_layers", cfg.n_layers},
            {"d_ff", cfg.d_ff},            {"max_len", cfg.max_len},
            {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.seed = j.at("seed").get<unsigned>();
    validate(cfg);
    return cfg;
}

int ParamStore::add(const std::string& name, Mat init) {
    if (index_of(name) >= 0) throw InvalidInput("duplicate parameter name: " + name);
    names_.push_back(name);
    values_.push_back(std::move(init));
    grads_.emplace_back();
    velocity_.emplace_back();
    return count() - 1;
}

int ParamStore::index_of(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return static_cast<int>(i);
    return -1;
}

void ParamStore::zero_grads() {
    // Empty buffers are re-allocated to the right shape on first use.
    for (Mat& g : grads_) g = Mat();
}

Var ParamStore::use(Tape& t, int i) { return t.param(values_[i], &grads_[i]); }

void ParamStore::sgd_step(double lr, double momentum) {
    for (size_t i = 0; i < values_.size(); ++i) {
        const Mat& g = grads_[i];
        if (g.a.empty()) continue;
        Mat& p = values_[i];
        if (momentum > 0.0) {
            Mat& v = velocity_[i];
            if (v.a.empty()) v = Mat(p.rows, p.cols);
            for (size_t k = 0; k < p.a.size(); ++k) {
                v.a[k] = momentum * v.a[k] + g.a[k];
                p.a[k] -= lr * v.a[k];
            }
        } else {
            for (size_t k = 0; k < p.a.size(); ++k) p.a[k] -= lr * g.a[k];
        }
    }
}

namespace {

Mat sinusoid_positions(int max_len, int d_model) {
    Mat p(max_len, d_model);
    for (int pos = 0; pos < max_len; ++pos)
        for (int i = 0; i < d_model; ++i) {
            double rate = std::pow(10000.0, -2.0 * (i / 2) / d_model);
            double angle = pos * rate;
            p(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return p;
}

}  // namespace

Model::Model(const ModelConfig& cfg, ParamStore& params) : cfg_(cfg), params_(&params) {
    validate(cfg);
    positions_ = sinusoid_positions(cfg.max_len, cfg.d_model);

    std::mt19937 rng(cfg.seed);
    // Fan-in scaling keeps first-layer attention scores at unit order;
    // a flat small init leaves the softmax frozen near uniform.
    auto dense = [&](const std::string& name, int r, int c, double sigma) {
        std::normal_distribution<double> gauss(0.0, sigma);
        Mat m(r, c);
        for (double& v : m.a) v = gauss(rng);
        return params.add(name, std::move(m));
    };
    auto fan_in = [](int r) { return 1.0 / std::sqrt(static_cast<double>(r)); };
    auto zeros = [&](const std::string& name, int r, int c) { return params.add(name, Mat(r, c)); };
    auto ones = [&](const std::string& name, int c) {
        Mat m(1, c);
        for (double& v : m.a) v = 1.0;
        return params.add(name, std::move(m));
    };

    // Unit-norm rows, commensurate with the sinusoidal positions.
    embed_ = dense("embedding", cfg.vocab_size, cfg.d_model, fan_in(cfg.d_model));
    for (int l = 0; l < cfg.n_layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        LayerIds ids;
        ids.wq = dense(p + "attn.wq", cfg.d_model, cfg.d_model, fan_in(cfg.d_model));
        ids.bq = zeros(p + "attn.bq", 1, cfg.d_model);
        ids.wk = dense(p + "attn.wk", cfg.d_model, cfg.d_model, fan_in(cfg.d_model));
        ids.bk = zeros(p + "attn.bk", 1, cfg.d_model);
        ids.wv = dense(p + "attn.wv", cfg.d_model, cfg.d_model, fan_in(cfg.d_model));
        ids.bv = zeros(p + "attn.bv", 1, cfg.d_model);
        ids.wo = dense(p + "attn.wo", cfg.d_model, cfg.d_model, fan_in(cfg.d_model));
        ids.bo = zeros(p + "attn.bo", 1, cfg.d_model);
        ids.ln1_gain = ones(p + "ln1.gain", cfg.d_model);
        ids.ln1_bias = zeros(p + "ln1.bias", 1, cfg.d_model);
        ids.ff_w1 = dense(p + "ff.w1", cfg.d_model, cfg.d_ff, fan_in(cfg.d_model));
        ids.ff_b1 = zeros(p + "ff.b1", 1, cfg.d_ff);
        ids.ff_w2 = dense(p + "ff.w2", cfg.d_ff, cfg.d_model, fan_in(cfg.d_ff));
        ids.ff_b2 = zeros(p + "ff.b2", 1, cfg.d_model);
        ids.ln2_gain = ones(p + "ln2.gain", cfg.d_model);
        ids.ln2_bias = zeros(p + "ln2.bias", 1, cfg.d_model);
        layers_.push_back(ids);
    }
    out_w_ = dense("out.w", cfg.d_model, cfg.vocab_size, fan_in(cfg.d_model));
    out_b_ = zeros("out.b", 1, cfg.vocab_size);
}

ForwardResult Model::forward(Tape& t, const std::vector<int>& ids) const {
    int n = static_cast<int>(ids.size());
    if (n == 0) throw InvalidInput("empty input sequence");
    if (n > cfg_.max_len)
        throw SequenceTooLong("sequence of " + std::to_string(n) + " exceeds max_len " +
                              std::to_string(cfg_.max_len));
    for (int id : ids)
        if (id < 0 || id >= cfg_.vocab_size) throw InvalidInput("token id outside the vocabulary");

    ParamStore& ps = *params_;
    int dk = cfg_.d_model / cfg_.n_heads;
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    Mat pos(n, cfg_.d_model);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cfg_.d_model; ++j) pos(i, j) = positions_(i, j);

    Var x = t.add(t.gather_rows(ps.use(t, embed_), ids), t.leaf(std::move(pos)));

    ForwardResult out;
    for (const LayerIds& L : layers_) {
        Var q = t.add_rowvec(t.matmul(x, ps.use(t, L.wq)), ps.use(t, L.bq));
        Var k = t.add_rowvec(t.matmul(x, ps.use(t, L.wk)), ps.use(t, L.bk));
        Var v = t.add_rowvec(t.matmul(x, ps.use(t, L.wv)), ps.use(t, L.bv));

        std::vector<Var> head_out, head_attn, head_scores;
        for (int h = 0; h < cfg_.n_heads; ++h) {
            int c0 = h * dk, c1 = (h + 1) * dk;
            Var s = t.scale(t.matmul_nt(t.slice_cols(q, c0, c1), t.slice_cols(k, c0, c1)),
                            inv_sqrt_dk);
            Var a = t.softmax_rows(s);
            head_scores.push_back(s);
            head_attn.push_back(a);
            head_out.push_back(t.matmul(a, t.slice_cols(v, c0, c1)));
        }
        out.scores.push_back(std::move(head_scores));
        out.attention.push_back(std::move(head_attn));

        Var proj =
            t.add_rowvec(t.matmul(t.concat_cols(head_out), ps.use(t, L.wo)), ps.use(t, L.bo));
        x = t.layer_norm_rows(t.add(x, proj), ps.use(t, L.ln1_gain), ps.use(t, L.ln1_bias));

        Var ff = t.gelu(t.add_rowvec(t.matmul(x, ps.use(t, L.ff_w1)), ps.use(t, L.ff_b1)));
        ff = t.add_rowvec(t.matmul(ff, ps.use(t, L.ff_w2)), ps.use(t, L.ff_b2));
        x = t.layer_norm_rows(t.add(x, ff), ps.use(t, L.ln2_gain), ps.use(t, L.ln2_bias));
    }
    out.logits = t.add_rowvec(t.matmul(x, ps.use(t, out_w_)), ps.use(t, out_b_));
    return out;
}

std::vector<Var> attention_vars(const ForwardResult& f, int layer, AttentionForm form) {
    if (layer < 0 || layer >= static_cast<int>(f.attention.size()))
        throw InvalidInput("attention layer index out of range");
    return form == AttentionForm::PostSoftmax ? f.attention[layer] : f.scores[layer];
}

AttentionTensor attention_tensor(const Tape& t, const ForwardResult& f, int layer,
                                 AttentionForm form) {
    AttentionTensor out;
    out.layer = layer;
    out.pre_softmax = form == AttentionForm::PreSoftmax;
    for (Var v : attention_vars(f, layer, form)) out.heads.push_back(t.value(v));
    return out;
}

Var task_loss_var(Tape& t, Var logits, const std::vector<int>& targets) {
    int rows = t.value(logits).rows;
    int cols = t.value(logits).cols;
    if (static_cast<int>(targets.size()) != rows)
        throw ShapeMismatch("one target per logit row required");

    std::vector<int> idx(targets.size(), 0);
    int supervised = 0;
    for (size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] < 0) continue;
        if (targets[i] >= cols) throw InvalidInput("target id outside the vocabulary");
        idx[i] = targets[i];
        ++supervised;
    }
    if (supervised == 0) throw InvalidInput("no supervised positions");

    std::vector<double> w(targets.size(), 0.0);
    for (size_t i = 0; i < targets.size(); ++i)
        if (targets[i] >= 0) w[i] = 1.0 / supervised;
    return t.dot_const(t.sub(t.logsumexp_rows(logits), t.pick_cols(logits, std::move(idx))),
                       std::move(w));
}

double task_loss(const Mat& logits, const std::vector<int>& targets) {
    Tape t;
    return t.value(task_loss_var(t, t.leaf(logits), targets))(0, 0);
}

nlohmann::json checkpoint_json(const ModelConfig& cfg, const ParamStore& params) {
    nlohmann::json p = nlohmann::json::object();
    for (int i = 0; i < params.count(); ++i) {
        const Mat& m = params.value(i);
        nlohmann::json entry;
        entry["shape"] = nlohmann::json::array({m.rows, m.cols});
        entry["values"] = m.a;
        p[params.name(i)] = std::move(entry);
    }
    return {{"config", to_json(cfg)}, {"params", std::move(p)}};
}

ModelConfig checkpoint_config(const nlohmann::json& j) {
    return model_config_from_json(j.at("config"));
}

void load_params(const nlohmann::json& j, ParamStore& params) {
    const nlohmann::json& p = j.at("params");
    for (int i = 0; i < params.count(); ++i) {
        auto it = p.find(params.name(i));
        if (it == p.end()) throw InvalidInput("checkpoint is missing parameter " + params.name(i));
        Mat& m = params.value(i);
        std::vector<int> shape = it->at("shape").get<std::vector<int>>();
        if (shape.size() != 2 || shape[0] != m.rows || shape[1] != m.cols)
            throw ShapeMismatch("checkpoint shape differs for " + params.name(i));
        std::vector<double> vals = it->at("values").get<std::vector<double>>();
        if (vals.size() != m.a.size())
            throw ShapeMismatch("checkpoint size differs for " + params.name(i));
        m.a = std::move(vals);
    }
}

}  // namespace sat
