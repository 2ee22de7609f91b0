#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sat/attention.hpp"
#include "sat/matrix.hpp"
#include "sat/structure_loss.hpp"
#include "sat/tape.hpp"

namespace sat {

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 32;
    int n_heads = 2;
    int n_layers = 2;
    int d_ff = 64;
    int max_len = 128;
    unsigned seed = 1;
};

// All sizes positive, d_model divisible by n_heads.
void validate(const ModelConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Named dense parameters with matching gradient buffers. Gradients
// accumulate across backward passes until zero_grads().
class ParamStore {
public:
    int add(const std::string& name, Mat init);
    int index_of(const std::string& name) const;  // -1 when absent
    int count() const { return static_cast<int>(values_.size()); }

    const std::string& name(int i) const { return names_[i]; }
    Mat& value(int i) { return values_[i]; }
    const Mat& value(int i) const { return values_[i]; }
    Mat& grad(int i) { return grads_[i]; }
    const Mat& grad(int i) const { return grads_[i]; }

    void zero_grads();
    // Registers parameter i on the tape; backward() accumulates into
    // the store's gradient buffer.
    Var use(Tape& t, int i);

    // p <- p - lr*v with v <- momentum*v + g (plain SGD at momentum 0).
    // Parameters whose gradient buffer was never touched stay put.
    void sgd_step(double lr, double momentum = 0.0);

private:
    std::vector<std::string> names_;
    std::vector<Mat> values_;
    std::vector<Mat> grads_;
    std::vector<Mat> velocity_;
};

struct ForwardResult {
    Var logits;  // n x vocab
    // [layer][head], each n x n over the full input sequence.
    std::vector<std::vector<Var>> attention;  // post-softmax probabilities
    std::vector<std::vector<Var>> scores;     // pre-softmax scaled products
};

// Post-norm transformer encoder: embedding plus sinusoidal positions,
// per-layer multi-head self-attention and a GELU feed-forward block,
// each followed by residual + layer norm, then a linear vocab readout.
// Every head's attention is recorded on the side; reading it never
// alters the computation (the recorded nodes are the ones the forward
// pass itself consumes).
class Model {
public:
    Model(const ModelConfig& cfg, ParamStore& params);

    const ModelConfig& config() const { return cfg_; }

    // Rejects empty input, ids outside the vocabulary, and sequences
    // longer than max_len.
    ForwardResult forward(Tape& t, const std::vector<int>& ids) const;

private:
    struct LayerIds {
        int wq, bq, wk, bk, wv, bv, wo, bo;
        int ln1_gain, ln1_bias;
        int ff_w1, ff_b1, ff_w2, ff_b2;
        int ln2_gain, ln2_bias;
    };

    ModelConfig cfg_;
    ParamStore* params_;
    Mat positions_;  // max_len x d_model, fixed sinusoids
    int embed_ = -1;
    int out_w_ = -1, out_b_ = -1;
    std::vector<LayerIds> layers_;
};

// One layer's heads in the requested form, as tape vars (full n x n).
std::vector<Var> attention_vars(const ForwardResult& f, int layer, AttentionForm form);
// Value snapshot of the same.
AttentionTensor attention_tensor(const Tape& t, const ForwardResult& f, int layer,
                                 AttentionForm form);

// Mean cross entropy over positions whose target id is >= 0; negative
// targets mark unsupervised positions. Throws ShapeMismatch when the
// target count differs from the logit rows, InvalidInput when no
// position is supervised or a target id is out of range.
Var task_loss_var(Tape& t, Var logits, const std::vector<int>& targets);
double task_loss(const Mat& logits, const std::vector<int>& targets);

// Flat map of parameter name -> shape + values, bundled with the config.
nlohmann::json checkpoint_json(const ModelConfig& cfg, const ParamStore& params);
ModelConfig checkpoint_config(const nlohmann::json& j);
// Overwrites store values by name. Throws InvalidInput on a missing
// name, ShapeMismatch on a shape change.
void load_params(const nlohmann::json& j, ParamStore& params);

}  // namespace sat
