#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sat/alignment.hpp"
#include "sat/errors.hpp"
#include "sat/harness.hpp"
#include "sat/nano_model.hpp"
#include "sat/probe.hpp"
#include "sat/sinkhorn.hpp"
#include "sat/structure_loss.hpp"
#include "sat/syntax.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw sat::InvalidInput("cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

json read_json(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw sat::InvalidInput(path + ": " + e.what());
    }
}

// Writes via a temp file plus rename so readers never see a partial
// artifact. The parent directory must already exist.
void atomic_write(const fs::path& path, const std::string& content) {
    fs::path parent = path.parent_path();
    if (!parent.empty() && !fs::is_directory(parent))
        throw sat::UsageError("output directory " + parent.string() + " does not exist");
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw sat::InvalidInput("cannot open " + tmp.string() + " for writing");
        out << content;
    }
    fs::rename(tmp, path);
}

void require_parent(const std::string& out) {
    fs::path parent = fs::path(out).parent_path();
    if (!parent.empty() && !fs::is_directory(parent))
        throw sat::UsageError("output directory " + parent.string() + " does not exist");
}

sat::Mat mat_from_json(const json& j, const std::string& path) {
    if (!j.contains("shape") || !j.contains("values"))
        throw sat::InvalidInput(path + ": expected keys 'shape' and 'values'");
    auto shape = j.at("shape");
    if (shape.size() != 2) throw sat::InvalidInput(path + ": shape must be [rows, cols]");
    int rows = shape[0].get<int>();
    int cols = shape[1].get<int>();
    std::vector<double> values = j.at("values").get<std::vector<double>>();
    if (rows < 1 || cols < 1 || values.size() != static_cast<size_t>(rows) * cols)
        throw sat::InvalidInput(path + ": values count does not match shape");
    sat::Mat m(rows, cols);
    m.a = std::move(values);
    return m;
}

struct DistancesArgs {
    std::string lang = "mini";
    std::string in, out;
};

void run_distances(const DistancesArgs& a) {
    sat::SourceUnit unit{read_text(a.in), sat::language_from_string(a.lang)};
    sat::SyntaxTree tree = sat::parse(unit);
    sat::LeafTokenSequence leaves = sat::extract_leaves(tree);
    sat::DistanceMatrix token_d = sat::token_distance_matrix(leaves, tree);

    sat::SubtokenSequence subs = sat::subtokenize(leaves);
    sat::AlignmentMap map = sat::align(subs, leaves);
    sat::DistanceMatrix sub_d = sat::expand_distance_matrix(token_d, subs, map);

    json out = {{"token", sat::to_json(token_d)}, {"subtoken", sat::to_json(sub_d)}};
    atomic_write(a.out, out.dump(2) + "\n");
}

void run_align(const DistancesArgs& a) {
    sat::SourceUnit unit{read_text(a.in), sat::language_from_string(a.lang)};
    sat::SyntaxTree tree = sat::parse(unit);
    sat::LeafTokenSequence leaves = sat::extract_leaves(tree);
    sat::SubtokenSequence subs = sat::subtokenize(leaves);
    sat::AlignmentMap map = sat::align(subs, leaves);
    atomic_write(a.out, sat::to_json(subs, map).dump(2) + "\n");
}

struct SinkhornArgs {
    std::string x, y;
    std::string config, out;
    bool strict = false;
};

void run_sinkhorn(const SinkhornArgs& a) {
    sat::PointCloud x = sat::cloud_from_rows(mat_from_json(read_json(a.x), a.x));
    sat::PointCloud y = sat::cloud_from_rows(mat_from_json(read_json(a.y), a.y));
    sat::SinkhornConfig cfg;
    if (!a.config.empty()) cfg = sat::sinkhorn_config_from_json(read_json(a.config));

    sat::SinkhornResult r = sat::sinkhorn_divergence(x, y, cfg);
    if (a.strict && !r.converged)
        throw sat::NotConverged("solver stopped after " + std::to_string(r.iters) + " sweeps");
    if (!a.out.empty()) {
        json out = {{"value", r.value}, {"converged", r.converged}, {"iters", r.iters}};
        atomic_write(a.out, out.dump(2) + "\n");
    }
    std::printf("%.17g\n", r.value);
}

struct TrainArgs {
    std::string config, out;
    std::vector<unsigned> seeds;
    double alpha = -1.0;
    double sample_rate = -1.0;
    int corpus_size = 240;
    unsigned corpus_seed = 77;
    int jobs = 1;
};

void run_train(const TrainArgs& a) {
    require_parent(a.out);
    sat::RunConfig base;
    if (!a.config.empty()) base = sat::run_config_from_json(read_json(a.config));
    if (a.alpha >= 0.0) base.sat.alpha = a.alpha;
    if (a.sample_rate > 0.0) base.sample_rate = a.sample_rate;

    std::vector<unsigned> seeds = a.seeds.empty() ? std::vector<unsigned>{base.seed} : a.seeds;
    sat::Corpus corpus = sat::build_toy_corpus(a.corpus_size, a.corpus_seed);

    std::vector<sat::RunConfig> runs;
    for (unsigned s : seeds) {
        sat::RunConfig r = base;
        r.seed = s;
        runs.push_back(r);
    }

    std::vector<std::string> lines(runs.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (size_t i = next.fetch_add(1); i < runs.size(); i = next.fetch_add(1)) {
            sat::TrainResult res = sat::train(runs[i], corpus);
            std::string dir =
                runs.size() == 1 ? a.out
                                 : (fs::path(a.out) / ("seed" + std::to_string(runs[i].seed)))
                                       .string();
            sat::write_run_outputs(res, runs[i], dir);
            char buf[160];
            std::snprintf(buf, sizeof(buf), "seed %u bleu %.4f exact_match %.4f converged %s",
                          runs[i].seed, res.final_bleu, res.final_exact,
                          res.all_converged ? "yes" : "no");
            lines[i] = buf;
        }
    };

    int jobs = std::max(1, std::min<int>(a.jobs, static_cast<int>(runs.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    for (const std::string& line : lines) std::printf("%s\n", line.c_str());
}

struct ProbeArgs {
    std::string ckpt_a, ckpt_b;
    std::string config, out;
    int corpus_size = 240;
    unsigned corpus_seed = 77;
    double theta_a = -1.0;
    int theta_d = -1;
    int layer = -1;
    bool per_head = false;
};

sat::ProbeReport probe_one(const std::string& path,
                           const std::vector<sat::EncodedExample>& examples,
                           const sat::ProbeConfig& cfg, int vocab_size) {
    json ckpt = read_json(path);
    sat::ModelConfig mc = sat::checkpoint_config(ckpt);
    if (mc.vocab_size != vocab_size)
        throw sat::InvalidInput(path + ": checkpoint vocabulary has " +
                                std::to_string(mc.vocab_size) + " entries but the corpus yields " +
                                std::to_string(vocab_size) +
                                "; pass the corpus flags used for training");
    return sat::probe_checkpoint(ckpt, examples, cfg);
}

void run_probe(const ProbeArgs& a) {
    sat::RunConfig run;
    if (!a.config.empty()) run = sat::run_config_from_json(read_json(a.config));

    sat::Corpus corpus = sat::build_toy_corpus(a.corpus_size, a.corpus_seed);
    sat::Vocab vocab = sat::build_vocab(corpus);
    std::vector<sat::EncodedExample> examples;
    for (int idx : corpus.test)
        examples.push_back(
            sat::encode_example(corpus.examples[idx].source, vocab, run.model.max_len - 2));

    sat::ProbeConfig cfg;
    cfg.theta_a = a.theta_a;
    cfg.theta_d = a.theta_d;
    cfg.layer_index = a.layer >= 0 ? a.layer : run.sat.layer_index;
    cfg.head_reduction = a.per_head ? sat::HeadReduction::PerHead : sat::HeadReduction::Mean;

    sat::ProbeReport ra = probe_one(a.ckpt_a, examples, cfg, vocab.size());
    sat::ProbeReport rb = probe_one(a.ckpt_b, examples, cfg, vocab.size());

    for (size_t i = 0; i < ra.scores.size(); ++i)
        std::printf("%zu %.6f %.6f\n", i, ra.scores[i], rb.scores[i]);
    std::printf("mean %.6f %.6f delta %+.6f\n", ra.mean, rb.mean, ra.mean - rb.mean);

    if (!a.out.empty()) {
        json out = {{"a", sat::to_json(ra)},
                    {"b", sat::to_json(rb)},
                    {"delta", ra.mean - rb.mean}};
        atomic_write(a.out, out.dump(2) + "\n");
    }
}

struct BleuArgs {
    std::string hyp, ref;
    std::string out;
};

std::vector<std::vector<std::string>> token_lines(const std::string& path) {
    std::istringstream in(read_text(path));
    std::vector<std::vector<std::string>> lines;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<std::string> toks;
        std::string t;
        while (ls >> t) toks.push_back(t);
        lines.push_back(std::move(toks));
    }
    return lines;
}

void run_bleu(const BleuArgs& a) {
    auto hyp = token_lines(a.hyp);
    auto ref = token_lines(a.ref);
    if (hyp.size() != ref.size())
        throw sat::InvalidInput("hypothesis has " + std::to_string(hyp.size()) +
                                " lines but reference has " + std::to_string(ref.size()));
    if (hyp.empty()) throw sat::InvalidInput("no lines to score");

    double bleu = 0.0, em = 0.0;
    for (size_t i = 0; i < hyp.size(); ++i) {
        bleu += sat::smoothed_bleu4(hyp[i], ref[i]);
        em += sat::exact_match(hyp[i], ref[i]);
    }
    bleu /= static_cast<double>(hyp.size());
    em /= static_cast<double>(hyp.size());

    std::printf("bleu %.4f exact_match %.4f\n", bleu, em);
    if (!a.out.empty()) {
        json out = {{"bleu", bleu}, {"exact_match", em}, {"count", hyp.size()}};
        atomic_write(a.out, out.dump(2) + "\n");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structure-aware fine-tuning toolkit"};
    app.require_subcommand(1);

    DistancesArgs dist;
    CLI::App* cmd_distances =
        app.add_subcommand("distances", "Parse a source file and emit its tree distance matrices");
    cmd_distances->add_option("--lang", dist.lang, "Source language (toy or mini)");
    cmd_distances->add_option("--in", dist.in, "Source file")->required();
    cmd_distances->add_option("--out", dist.out, "Output JSON path")->required();

    DistancesArgs al;
    CLI::App* cmd_align =
        app.add_subcommand("align", "Emit the subtoken split and its token alignment");
    cmd_align->add_option("--lang", al.lang, "Source language (toy or mini)");
    cmd_align->add_option("--in", al.in, "Source file")->required();
    cmd_align->add_option("--out", al.out, "Output JSON path")->required();

    SinkhornArgs sk;
    CLI::App* cmd_sinkhorn =
        app.add_subcommand("sinkhorn", "Debiased divergence between two point cloud files");
    cmd_sinkhorn->add_option("x", sk.x, "First cloud, JSON {shape, values}")->required();
    cmd_sinkhorn->add_option("y", sk.y, "Second cloud, JSON {shape, values}")->required();
    cmd_sinkhorn->add_option("--config", sk.config, "Solver config JSON");
    cmd_sinkhorn->add_option("--out", sk.out, "Optional result JSON path");
    cmd_sinkhorn->add_flag("--strict", sk.strict, "Fail when the solver does not converge");

    TrainArgs tr;
    CLI::App* cmd_train = app.add_subcommand("train", "Train on the toy corpus and write metrics");
    cmd_train->add_option("--config", tr.config, "Run config JSON");
    cmd_train->add_option("--out", tr.out, "Output directory")->required();
    cmd_train->add_option("--seed", tr.seeds, "Seed; repeat for multiple runs");
    cmd_train->add_option("--alpha", tr.alpha, "Override the structure loss weight");
    cmd_train->add_option("--sample-rate", tr.sample_rate, "Override the train subsample rate");
    cmd_train->add_option("--corpus-size", tr.corpus_size, "Toy corpus size");
    cmd_train->add_option("--corpus-seed", tr.corpus_seed, "Toy corpus seed");
    cmd_train->add_option("--jobs", tr.jobs, "Parallel runs when multiple seeds are given")
        ->check(CLI::PositiveNumber);

    ProbeArgs pr;
    CLI::App* cmd_probe =
        app.add_subcommand("probe", "Compare attention-structure agreement of two checkpoints");
    cmd_probe->add_option("a", pr.ckpt_a, "First checkpoint JSON")->required();
    cmd_probe->add_option("b", pr.ckpt_b, "Second checkpoint JSON")->required();
    cmd_probe->add_option("--config", pr.config, "Run config JSON used for training");
    cmd_probe->add_option("--out", pr.out, "Optional paired report JSON path");
    cmd_probe->add_option("--corpus-size", pr.corpus_size, "Toy corpus size");
    cmd_probe->add_option("--corpus-seed", pr.corpus_seed, "Toy corpus seed");
    cmd_probe->add_option("--theta-a", pr.theta_a, "Attention cutoff, -1 for 1/n");
    cmd_probe->add_option("--theta-d", pr.theta_d, "Distance cutoff, -1 for the median");
    cmd_probe->add_option("--layer", pr.layer, "Layer to probe, default the trained layer");
    cmd_probe->add_flag("--per-head", pr.per_head, "Average per-head agreement");

    BleuArgs bl;
    CLI::App* cmd_bleu =
        app.add_subcommand("bleu", "Score line-aligned hypothesis and reference files");
    cmd_bleu->add_option("hypothesis", bl.hyp, "Hypothesis file, one sequence per line")
        ->required();
    cmd_bleu->add_option("reference", bl.ref, "Reference file, one sequence per line")->required();
    cmd_bleu->add_option("--out", bl.out, "Optional result JSON path");

    cmd_distances->callback([&]() { run_distances(dist); });
    cmd_align->callback([&]() { run_align(al); });
    cmd_sinkhorn->callback([&]() { run_sinkhorn(sk); });
    cmd_train->callback([&]() { run_train(tr); });
    cmd_probe->callback([&]() { run_probe(pr); });
    cmd_bleu->callback([&]() { run_bleu(bl); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        json err = {{"error", "UsageError"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 2;
    } catch (const sat::UsageError& e) {
        json err = {{"error", e.kind()}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 2;
    } catch (const sat::Error& e) {
        json err = {{"error", e.kind()}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        json err = {{"error", "Error"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
