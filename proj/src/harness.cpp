#include "sat/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <utility>

#include "sat/alignment.hpp"
#include "sat/errors.hpp"

namespace sat {

namespace {

const std::vector<std::string> kVerbs = {"load",  "save",  "render", "parse", "merge",
                                         "split", "index", "count",  "hash",  "emit",
                                         "scan",  "pack",  "fetch",  "build", "strip"};
const std::vector<std::string> kNouns = {"item", "node", "list", "tree", "text",
                                         "data", "body", "head", "page", "file",
                                         "key",  "row",  "cell", "line", "word"};
const std::vector<std::string> kParamPool = {"a", "b", "x", "y", "z", "name", "key", "val", "src"};

const std::string& pick(const std::vector<std::string>& pool, std::mt19937& rng) {
    return pool[std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng)];
}

int roll(int lo, int hi, std::mt19937& rng) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

std::string capitalized(std::string s) {
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

std::string make_name(std::mt19937& rng) {
    switch (roll(0, 3, rng)) {
        case 0: return pick(kVerbs, rng) + "_" + pick(kNouns, rng);
        case 1: return pick(kVerbs, rng) + capitalized(pick(kNouns, rng));
        case 2: return pick(kVerbs, rng) + "_" + pick(kNouns, rng) + "_" + pick(kNouns, rng);
        default: return pick(kVerbs, rng);
    }
}

// Expressions stay within the snippet grammar; in particular a symbol
// literal is only valid directly after "(" or ",", so symbols appear
// only as whole call arguments.
std::string make_expr(const std::vector<std::string>& scope, std::mt19937& rng, int depth);

std::string make_atom(const std::vector<std::string>& scope, std::mt19937& rng) {
    int c = roll(0, 2, rng);
    if (c == 0) return std::to_string(roll(0, 99, rng));
    if (c == 1 && !scope.empty()) return pick(scope, rng);
    return pick(kNouns, rng);
}

std::string make_call(const std::vector<std::string>& scope, std::mt19937& rng, int depth) {
    std::string out = make_name(rng) + "(";
    int arity = roll(0, 2, rng);
    for (int i = 0; i < arity; ++i) {
        if (i > 0) out += ", ";
        if (roll(0, 2, rng) == 0) out += ":" + pick(kNouns, rng);
        else out += make_expr(scope, rng, depth - 1);
    }
    return out + ")";
}

std::string make_expr(const std::vector<std::string>& scope, std::mt19937& rng, int depth) {
    if (depth <= 0) return make_atom(scope, rng);
    switch (roll(0, 3, rng)) {
        case 0: return make_atom(scope, rng);
        case 1: return make_call(scope, rng, depth);
        case 2: {
            const char* ops[] = {" + ", " - ", " * "};
            return make_expr(scope, rng, depth - 1) + ops[roll(0, 2, rng)] +
                   make_expr(scope, rng, depth - 1);
        }
        default: return "(" + make_expr(scope, rng, depth - 1) + ")";
    }
}

std::string make_snippet(std::mt19937& rng) {
    std::vector<std::string> params;
    int arity = roll(0, 3, rng);
    for (int i = 0; i < arity; ++i) {
        std::string p = pick(kParamPool, rng);
        if (std::find(params.begin(), params.end(), p) == params.end()) params.push_back(p);
    }
    std::string head = "def " + make_name(rng) + "(";
    for (size_t i = 0; i < params.size(); ++i) {
        if (i > 0) head += ", ";
        head += params[i];
    }
    head += "): ";

    int stmts = roll(1, 2, rng);
    std::string body;
    for (int s = 0; s < stmts; ++s) {
        if (s > 0) body += "; ";
        if (roll(0, 4, rng) < 2) body += pick(kParamPool, rng) + " = " + make_expr(params, rng, 2);
        else body += make_call(params, rng, 2);
    }
    return head + body;
}

std::vector<std::string> content_subtokens(const SourceUnit& source) {
    SyntaxTree tree = parse(source);
    SubtokenSequence subs = subtokenize(extract_leaves(tree));
    std::vector<std::string> out;
    for (const Subtoken& s : subs.subtokens)
        if (s.owner >= 0) out.push_back(s.text);
    return out;
}

}  // namespace

Mat content_block(const Mat& a) {
    Mat out(a.rows - 2, a.cols - 2);
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) out(i, j) = a(i + 1, j + 1);
    return out;
}

Corpus build_toy_corpus(int n, unsigned seed) {
    if (n < 10) throw InvalidInput("corpus needs at least 10 examples");
    std::mt19937 rng(seed);
    Corpus corpus;
    for (int i = 0; i < n; ++i) {
        SourceUnit unit{make_snippet(rng), Language::Mini};
        // The generator stays inside the grammar; a failure here is a
        // generator bug, not an input problem.
        Example ex{unit, content_subtokens(unit)};
        corpus.examples.push_back(std::move(ex));
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    int t = static_cast<int>(std::llround(0.8 * n));
    int v = static_cast<int>(std::llround(0.9 * n));
    corpus.train.assign(order.begin(), order.begin() + t);
    corpus.valid.assign(order.begin() + t, order.begin() + v);
    corpus.test.assign(order.begin() + v, order.end());
    std::sort(corpus.train.begin(), corpus.train.end());
    std::sort(corpus.valid.begin(), corpus.valid.end());
    std::sort(corpus.test.begin(), corpus.test.end());
    return corpus;
}

Corpus subsample(const Corpus& corpus, double rate, unsigned seed) {
    if (!(rate > 0.0) || rate > 1.0) throw InvalidInput("sample rate must be in (0, 1]");
    Corpus out = corpus;
    std::vector<int> order = corpus.train;
    std::shuffle(order.begin(), order.end(), std::mt19937(seed));
    size_t keep = static_cast<size_t>(std::llround(rate * static_cast<double>(order.size())));
    if (keep < 1) keep = 1;
    if (keep > order.size()) keep = order.size();
    out.train.assign(order.begin(), order.begin() + keep);
    std::sort(out.train.begin(), out.train.end());
    return out;
}

int Vocab::id_of(const std::string& s) const {
    for (int i = 0; i < 5 && i < size(); ++i)
        if (items[i] == s) return i;
    auto begin = items.begin() + 5;
    auto it = std::lower_bound(begin, items.end(), s);
    if (it != items.end() && *it == s) return static_cast<int>(it - items.begin());
    return kUnkId;
}

Vocab build_vocab(const Corpus& corpus) {
    std::set<std::string> seen;
    for (int i : corpus.train)
        for (const std::string& s : corpus.examples[i].target) seen.insert(s);
    Vocab vocab;
    vocab.items = {"<pad>", kSeqStart, kSeqEnd, "<mask>", "<unk>"};
    vocab.items.insert(vocab.items.end(), seen.begin(), seen.end());
    return vocab;
}

EncodedExample encode_example(const SourceUnit& source, const Vocab& vocab, int max_content) {
    if (max_content < 1) throw InvalidInput("max_content must be positive");
    SyntaxTree tree = parse(source);
    LeafTokenSequence leaves = extract_leaves(tree);
    DistanceMatrix token_d = token_distance_matrix(leaves, tree);
    SubtokenSequence subs = subtokenize(leaves);
    AlignmentMap map = align(subs, leaves);
    if (subs.content_size() > max_content) {
        auto cut = truncate(subs, map, max_content);
        subs = std::move(cut.first);
        map = std::move(cut.second);
    }

    EncodedExample out;
    out.distances = expand_distance_matrix(token_d, subs, map);
    for (const Subtoken& s : subs.subtokens) {
        if (s.owner < 0) continue;
        out.content.push_back(s.text);
    }
    out.ids.push_back(kStartId);
    for (const std::string& s : out.content) out.ids.push_back(vocab.id_of(s));
    out.ids.push_back(kEndId);
    return out;
}

MaskedSample corrupt(const EncodedExample& ex, std::mt19937& rng, double mask_rate) {
    int n = static_cast<int>(ex.ids.size());
    MaskedSample ms;
    ms.ids = ex.ids;
    ms.targets.assign(n, -1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    int masked = 0;
    for (int i = 1; i < n - 1; ++i)
        if (unif(rng) < mask_rate) {
            ms.targets[i] = ms.ids[i];
            ms.ids[i] = kMaskId;
            ++masked;
        }
    if (masked == 0 && n > 2) {
        int i = std::uniform_int_distribution<int>(1, n - 2)(rng);
        ms.targets[i] = ms.ids[i];
        ms.ids[i] = kMaskId;
    }
    return ms;
}

void validate(const RunConfig& run) {
    validate(run.model);
    validate(run.sat);
    validate(run.sinkhorn);
    if (run.model.max_len < 3) throw InvalidInput("max_len must fit markers plus content");
    if (run.sat.layer_index >= run.model.n_layers)
        throw InvalidInput("attention layer index exceeds model depth");
    if (!(run.lr > 0.0)) throw InvalidInput("learning rate must be positive");
    if (run.momentum < 0.0 || run.momentum >= 1.0) throw InvalidInput("momentum must be in [0, 1)");
    if (!(run.encoder_lr_scale > 0.0) || !std::isfinite(run.encoder_lr_scale))
        throw InvalidInput("encoder learning-rate scale must be positive and finite");
    if (run.encoder_grad_clip < 0.0 || !std::isfinite(run.encoder_grad_clip))
        throw InvalidInput("encoder gradient clip must be non-negative and finite");
    if (run.steps < 1) throw InvalidInput("step count must be positive");
    if (run.batch_size < 1) throw InvalidInput("batch size must be positive");
    if (run.eval_every < 0) throw InvalidInput("eval cadence must be non-negative");
    if (!(run.mask_rate > 0.0) || run.mask_rate >= 1.0)
        throw InvalidInput("mask rate must be in (0, 1)");
    if (!(run.sample_rate > 0.0) || run.sample_rate > 1.0)
        throw InvalidInput("sample rate must be in (0, 1]");
}

nlohmann::json to_json(const SinkhornConfig& cfg) {
    return {{"epsilon", cfg.epsilon},
            {"relative_epsilon", cfg.relative_epsilon},
            {"scaling", cfg.scaling},
            {"max_iters", cfg.max_iters},
            {"tol", cfg.tol}};
}

SinkhornConfig sinkhorn_config_from_json(const nlohmann::json& j) {
    SinkhornConfig cfg;
    cfg.epsilon = j.value("epsilon", cfg.epsilon);
    cfg.relative_epsilon = j.value("relative_epsilon", cfg.relative_epsilon);
    cfg.scaling = j.value("scaling", cfg.scaling);
    cfg.max_iters = j.value("max_iters", cfg.max_iters);
    cfg.tol = j.value("tol", cfg.tol);
    return cfg;
}

nlohmann::json to_json(const RunConfig& run) {
    return {{"model", to_json(run.model)},
            {"sat",
             {{"alpha", run.sat.alpha},
              {"layer_index", run.sat.layer_index},
              {"attention_form",
               run.sat.attention_form == AttentionForm::PostSoftmax ? "post_softmax"
                                                                    : "pre_softmax"}}},
            {"sinkhorn", to_json(run.sinkhorn)},
            {"lr", run.lr},
            {"momentum", run.momentum},
            {"encoder_lr_scale", run.encoder_lr_scale},
            {"encoder_grad_clip", run.encoder_grad_clip},
            {"steps", run.steps},
            {"batch_size", run.batch_size},
            {"eval_every", run.eval_every},
            {"mask_rate", run.mask_rate},
            {"sample_rate", run.sample_rate},
            {"seed", run.seed}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig run;
    if (j.contains("model")) {
        const nlohmann::json& m = j.at("model");
        run.model.vocab_size = m.value("vocab_size", run.model.vocab_size);
        run.model.d_model = m.value("d_model", run.model.d_model);
        run.model.n_heads = m.value("n_heads", run.model.n_heads);
        run.model.n_layers = m.value("n_layers", run.model.n_layers);
        run.model.d_ff = m.value("d_ff", run.model.d_ff);
        run.model.max_len = m.value("max_len", run.model.max_len);
        run.model.seed = m.value("seed", run.model.seed);
    }
    if (j.contains("sat")) {
        const nlohmann::json& s = j.at("sat");
        run.sat.alpha = s.value("alpha", run.sat.alpha);
        run.sat.layer_index = s.value("layer_index", run.sat.layer_index);
        std::string form = s.value("attention_form", std::string("post_softmax"));
        if (form == "post_softmax") run.sat.attention_form = AttentionForm::PostSoftmax;
        else if (form == "pre_softmax") run.sat.attention_form = AttentionForm::PreSoftmax;
        else throw InvalidInput("attention_form must be post_softmax or pre_softmax");
    }
    if (j.contains("sinkhorn")) run.sinkhorn = sinkhorn_config_from_json(j.at("sinkhorn"));
    run.lr = j.value("lr", run.lr);
    run.momentum = j.value("momentum", run.momentum);
    run.encoder_lr_scale = j.value("encoder_lr_scale", run.encoder_lr_scale);
    run.encoder_grad_clip = j.value("encoder_grad_clip", run.encoder_grad_clip);
    run.steps = j.value("steps", run.steps);
    run.batch_size = j.value("batch_size", run.batch_size);
    run.eval_every = j.value("eval_every", run.eval_every);
    run.mask_rate = j.value("mask_rate", run.mask_rate);
    run.sample_rate = j.value("sample_rate", run.sample_rate);
    run.seed = j.value("seed", run.seed);
    return run;
}

nlohmann::json to_json(const TrainRecord& rec) {
    nlohmann::json j = {{"step", rec.step},
                        {"task_loss", rec.task_loss},
                        {"structure_loss", rec.structure_loss},
                        {"total_loss", rec.total_loss},
                        {"encoder_w", rec.encoder_w},
                        {"encoder_b", rec.encoder_b},
                        {"sinkhorn_converged", rec.sinkhorn_converged}};
    if (rec.has_eval) {
        j["bleu"] = rec.bleu;
        j["exact_match"] = rec.exact;
    }
    return j;
}

namespace {

struct EvalContext {
    const Model& model;
    const Vocab& vocab;
    double mask_rate;
    unsigned seed;
};

EvalMetrics evaluate_split(const EvalContext& ctx, const std::vector<EncodedExample>& split) {
    if (split.empty()) return {};
    double bleu = 0.0, exact = 0.0;
    for (size_t i = 0; i < split.size(); ++i) {
        // Per-example stream so the corruption is independent of the
        // evaluation order and of the training state.
        std::mt19937 rng(ctx.seed * 2654435761u + 977u * static_cast<unsigned>(i + 1));
        MaskedSample ms = corrupt(split[i], rng, ctx.mask_rate);
        Tape t;
        ForwardResult f = ctx.model.forward(t, ms.ids);
        const Mat& logits = t.value(f.logits);

        std::vector<std::string> hyp = split[i].content;
        for (size_t p = 0; p < ms.targets.size(); ++p) {
            if (ms.targets[p] < 0) continue;
            int row = static_cast<int>(p);
            int best = 0;
            for (int c = 1; c < logits.cols; ++c)
                if (logits(row, c) > logits(row, best)) best = c;
            hyp[p - 1] = ctx.vocab.items[best];
        }
        bleu += smoothed_bleu4(hyp, split[i].content);
        exact += exact_match(hyp, split[i].content);
    }
    double n = static_cast<double>(split.size());
    return {bleu / n, exact / n};
}

}  // namespace

TrainResult train(const RunConfig& run, const Corpus& corpus) {
    // The vocabulary always comes from the full train split so that
    // subsampled runs stay comparable; the model's vocab size follows.
    Vocab vocab = build_vocab(corpus);
    RunConfig cfg = run;
    cfg.model.vocab_size = vocab.size();
    validate(cfg);

    Corpus data = cfg.sample_rate < 1.0 ? subsample(corpus, cfg.sample_rate, cfg.seed) : corpus;
    int max_content = cfg.model.max_len - 2;

    auto encode_split = [&](const std::vector<int>& idx) {
        std::vector<EncodedExample> out;
        out.reserve(idx.size());
        for (int i : idx) out.push_back(encode_example(data.examples[i].source, vocab, max_content));
        return out;
    };
    std::vector<EncodedExample> train_ex = encode_split(data.train);
    std::vector<EncodedExample> valid_ex = encode_split(data.valid);
    std::vector<EncodedExample> test_ex = encode_split(data.test);
    if (train_ex.empty()) throw InvalidInput("train split is empty");

    ParamStore ps;
    Model model(cfg.model, ps);
    Mat w0(1, 1), b0(1, 1);
    w0(0, 0) = 1.0;
    int wi = ps.add("encoder.w", w0);
    int bi = ps.add("encoder.b", b0);

    std::mt19937 order_rng(cfg.seed);
    std::mt19937 mask_rng(cfg.seed + 0x9e3779b9u);
    std::vector<int> order(train_ex.size());
    std::iota(order.begin(), order.end(), 0);
    size_t cursor = order.size();

    double inv_batch = 1.0 / cfg.batch_size;
    TrainResult out;
    for (int step = 1; step <= cfg.steps; ++step) {
        double task_sum = 0.0, struct_sum = 0.0;
        bool conv = true;
        ps.zero_grads();
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                std::shuffle(order.begin(), order.end(), order_rng);
                cursor = 0;
            }
            const EncodedExample& ex = train_ex[order[cursor++]];
            MaskedSample ms = corrupt(ex, mask_rng, cfg.mask_rate);
            int n = static_cast<int>(ms.ids.size());

            Tape t;
            ForwardResult f = model.forward(t, ms.ids);
            Var task = task_loss_var(t, f.logits, ms.targets);
            task_sum += t.value(task)(0, 0);

            if (cfg.sat.alpha > 0.0) {
                std::vector<Var> heads;
                for (Var a : attention_vars(f, cfg.sat.layer_index, cfg.sat.attention_form))
                    heads.push_back(t.slice_block(a, 1, n - 1, 1, n - 1));
                StructureLossVars sl = structure_loss_var(t, heads, ex.distances, ps.use(t, wi),
                                                          ps.use(t, bi), cfg.sinkhorn);
                conv = conv && sl.converged;
                struct_sum += t.value(sl.mean)(0, 0);
                Var total = t.add(task, t.scale(sl.mean, cfg.sat.alpha));
                t.backward(t.scale(total, inv_batch));
            } else {
                // Reported for the record stream, outside the graph, so
                // the pure-task run still draws identical random streams.
                AttentionTensor attn =
                    attention_tensor(t, f, cfg.sat.layer_index, cfg.sat.attention_form);
                for (Mat& h : attn.heads) h = content_block(h);
                StructureEncoder enc{ps.value(wi)(0, 0), ps.value(bi)(0, 0)};
                struct_sum += structure_loss(
                    per_head_structure_loss(attn, ex.distances, enc, cfg.sinkhorn));
                t.backward(t.scale(task, inv_batch));
            }
        }

        TrainRecord rec;
        rec.step = step;
        rec.task_loss = task_sum * inv_batch;
        rec.structure_loss = struct_sum * inv_batch;
        rec.total_loss = combine_losses(rec.task_loss, rec.structure_loss, cfg.sat.alpha).total;
        rec.sinkhorn_converged = conv;
        out.all_converged = out.all_converged && conv;

        // A constant gradient scale on the encoder entries equals a
        // per-parameter learning rate, momentum included. The clip runs
        // first so the scale sets the drift speed near the stationary
        // region without amplifying the large early-gap gradients.
        if (cfg.encoder_grad_clip > 0.0) {
            double gw = ps.grad(wi).a.empty() ? 0.0 : ps.grad(wi)(0, 0);
            double gb = ps.grad(bi).a.empty() ? 0.0 : ps.grad(bi)(0, 0);
            double norm = std::sqrt(gw * gw + gb * gb);
            if (norm > cfg.encoder_grad_clip) {
                double shrink = cfg.encoder_grad_clip / norm;
                ps.grad(wi)(0, 0) = gw * shrink;
                ps.grad(bi)(0, 0) = gb * shrink;
            }
        }
        if (cfg.encoder_lr_scale != 1.0) {
            for (int pi : {wi, bi})
                for (double& v : ps.grad(pi).a) v *= cfg.encoder_lr_scale;
        }
        ps.sgd_step(cfg.lr, cfg.momentum);
        rec.encoder_w = ps.value(wi)(0, 0);
        rec.encoder_b = ps.value(bi)(0, 0);

        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
            EvalMetrics m =
                evaluate_split({model, vocab, cfg.mask_rate, cfg.seed}, valid_ex);
            rec.has_eval = true;
            rec.bleu = m.bleu;
            rec.exact = m.exact;
        }
        out.records.push_back(rec);
    }

    EvalMetrics held_out = evaluate_split({model, vocab, cfg.mask_rate, cfg.seed}, test_ex);
    out.final_bleu = held_out.bleu;
    out.final_exact = held_out.exact;
    out.encoder = StructureEncoder{ps.value(wi)(0, 0), ps.value(bi)(0, 0)};
    out.checkpoint = checkpoint_json(cfg.model, ps);
    return out;
}

double smoothed_bleu4(const std::vector<std::string>& hypothesis,
                      const std::vector<std::string>& reference) {
    if (reference.empty()) throw EmptyReference("reference must be non-empty");
    if (hypothesis.empty()) return 0.0;

    double log_p = 0.0;
    for (size_t n = 1; n <= 4; ++n) {
        std::map<std::vector<std::string>, int> counts;
        for (size_t i = 0; i + n <= reference.size(); ++i)
            ++counts[{reference.begin() + i, reference.begin() + i + n}];
        int total = 0, matched = 0;
        for (size_t i = 0; i + n <= hypothesis.size(); ++i) {
            ++total;
            auto it = counts.find({hypothesis.begin() + i, hypothesis.begin() + i + n});
            if (it != counts.end() && it->second > 0) {
                ++matched;
                --it->second;
            }
        }
        double p = matched > 0 ? static_cast<double>(matched) / total : 1.0 / (total + 1);
        log_p += std::log(p);
    }
    double geo = std::exp(log_p / 4.0);
    double bp = hypothesis.size() >= reference.size()
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(reference.size()) / hypothesis.size());
    return 100.0 * bp * geo;
}

double exact_match(const std::vector<std::string>& hypothesis,
                   const std::vector<std::string>& reference) {
    return hypothesis == reference ? 1.0 : 0.0;
}

namespace {

void atomic_write(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw InvalidInput("cannot open " + tmp.string() + " for writing");
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

void write_run_outputs(const TrainResult& result, const RunConfig& run, const std::string& dir) {
    std::filesystem::path base(dir);
    std::filesystem::create_directories(base);

    std::string lines;
    for (const TrainRecord& rec : result.records) lines += to_json(rec).dump() + "\n";
    atomic_write(base / "metrics.jsonl", lines);

    nlohmann::json summary = {
        {"config", to_json(run)},
        {"final",
         {{"bleu", result.final_bleu},
          {"exact_match", result.final_exact},
          {"steps", static_cast<int>(result.records.size())},
          {"all_converged", result.all_converged}}},
        {"encoder", {{"w", result.encoder.w}, {"b", result.encoder.b}}}};
    atomic_write(base / "summary.json", summary.dump(2) + "\n");

    atomic_write(base / "checkpoint.json", result.checkpoint.dump() + "\n");
}

}  // namespace sat
