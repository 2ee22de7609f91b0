#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include <json.hpp>

#include "sat/alignment.hpp"
#include "sat/errors.hpp"
#include "sat/harness.hpp"
#include "sat/nano_model.hpp"
#include "sat/probe.hpp"
#include "sat/sinkhorn.hpp"
#include "sat/syntax.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

py::object json_to_py(const json& j) {
    switch (j.type()) {
        case json::value_t::null:
            return py::none();
        case json::value_t::boolean:
            return py::bool_(j.get<bool>());
        case json::value_t::number_integer:
            return py::int_(j.get<long long>());
        case json::value_t::number_unsigned:
            return py::int_(j.get<unsigned long long>());
        case json::value_t::number_float:
            return py::float_(j.get<double>());
        case json::value_t::string:
            return py::str(j.get<std::string>());
        case json::value_t::array: {
            py::list out;
            for (const json& v : j) out.append(json_to_py(v));
            return out;
        }
        case json::value_t::object: {
            py::dict out;
            for (auto it = j.begin(); it != j.end(); ++it)
                out[py::str(it.key())] = json_to_py(it.value());
            return out;
        }
        default:
            throw sat::InvalidInput("unsupported json value");
    }
}

json py_to_json(py::handle h) {
    if (h.is_none()) return nullptr;
    if (py::isinstance<py::bool_>(h)) return h.cast<bool>();
    if (py::isinstance<py::int_>(h)) return h.cast<long long>();
    if (py::isinstance<py::float_>(h)) return h.cast<double>();
    if (py::isinstance<py::str>(h)) return h.cast<std::string>();
    if (py::isinstance<py::dict>(h)) {
        json out = json::object();
        for (auto item : h.cast<py::dict>())
            out[item.first.cast<std::string>()] = py_to_json(item.second);
        return out;
    }
    if (py::isinstance<py::list>(h) || py::isinstance<py::tuple>(h)) {
        json out = json::array();
        for (auto item : h.cast<py::sequence>()) out.push_back(py_to_json(item));
        return out;
    }
    throw sat::InvalidInput("cannot convert python value to json");
}

sat::Mat mat_from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw sat::InvalidInput("matrix needs at least one row");
    int r = static_cast<int>(rows.size());
    int c = static_cast<int>(rows[0].size());
    sat::Mat m(r, c);
    for (int i = 0; i < r; ++i) {
        if (static_cast<int>(rows[i].size()) != c)
            throw sat::InvalidInput("rows have unequal lengths");
        for (int j = 0; j < c; ++j) m(i, j) = rows[i][j];
    }
    return m;
}

sat::SourceUnit unit_of(const std::string& source, const std::string& lang) {
    return {source, sat::language_from_string(lang)};
}

py::dict py_distances(const std::string& source, const std::string& lang) {
    sat::SyntaxTree tree = sat::parse(unit_of(source, lang));
    sat::LeafTokenSequence leaves = sat::extract_leaves(tree);
    sat::DistanceMatrix token_d = sat::token_distance_matrix(leaves, tree);
    sat::SubtokenSequence subs = sat::subtokenize(leaves);
    sat::AlignmentMap map = sat::align(subs, leaves);
    sat::DistanceMatrix sub_d = sat::expand_distance_matrix(token_d, subs, map);
    json out = {{"token", sat::to_json(token_d)}, {"subtoken", sat::to_json(sub_d)}};
    return json_to_py(out);
}

py::dict py_align(const std::string& source, const std::string& lang) {
    sat::SyntaxTree tree = sat::parse(unit_of(source, lang));
    sat::LeafTokenSequence leaves = sat::extract_leaves(tree);
    sat::SubtokenSequence subs = sat::subtokenize(leaves);
    sat::AlignmentMap map = sat::align(subs, leaves);
    return json_to_py(sat::to_json(subs, map));
}

py::dict py_sinkhorn(const std::vector<std::vector<double>>& x,
                     const std::vector<std::vector<double>>& y, py::dict config) {
    sat::SinkhornConfig cfg = sat::sinkhorn_config_from_json(py_to_json(config));
    sat::SinkhornResult r = sat::sinkhorn_divergence(sat::cloud_from_rows(mat_from_rows(x)),
                                                     sat::cloud_from_rows(mat_from_rows(y)), cfg);
    json out = {{"value", r.value}, {"converged", r.converged}, {"iters", r.iters}};
    return json_to_py(out);
}

py::dict py_build_corpus(int n, unsigned seed) {
    sat::Corpus c = sat::build_toy_corpus(n, seed);
    json examples = json::array();
    for (const sat::Example& ex : c.examples)
        examples.push_back({{"source", ex.source.text}, {"target", ex.target}});
    json out = {{"examples", std::move(examples)},
                {"train", c.train},
                {"valid", c.valid},
                {"test", c.test}};
    return json_to_py(out);
}

py::dict py_train(py::dict config, int corpus_size, unsigned corpus_seed) {
    sat::RunConfig run = sat::run_config_from_json(py_to_json(config));
    sat::Corpus corpus = sat::build_toy_corpus(corpus_size, corpus_seed);
    sat::TrainResult res = sat::train(run, corpus);

    json records = json::array();
    for (const sat::TrainRecord& rec : res.records) records.push_back(sat::to_json(rec));
    json out = {{"config", sat::to_json(run)},
                {"records", std::move(records)},
                {"final",
                 {{"bleu", res.final_bleu},
                  {"exact_match", res.final_exact},
                  {"steps", static_cast<int>(res.records.size())},
                  {"all_converged", res.all_converged}}},
                {"encoder", {{"w", res.encoder.w}, {"b", res.encoder.b}}},
                {"checkpoint", res.checkpoint}};
    return json_to_py(out);
}

py::dict py_probe(py::dict checkpoint_a, py::dict checkpoint_b, py::dict config, int corpus_size,
                  unsigned corpus_seed, py::dict probe_config) {
    sat::RunConfig run = sat::run_config_from_json(py_to_json(config));
    sat::Corpus corpus = sat::build_toy_corpus(corpus_size, corpus_seed);
    sat::Vocab vocab = sat::build_vocab(corpus);
    std::vector<sat::EncodedExample> examples;
    for (int idx : corpus.test)
        examples.push_back(
            sat::encode_example(corpus.examples[idx].source, vocab, run.model.max_len - 2));

    sat::ProbeConfig cfg = sat::probe_config_from_json(py_to_json(probe_config));
    if (!probe_config.contains("layer_index")) cfg.layer_index = run.sat.layer_index;

    sat::ProbeReport ra = sat::probe_checkpoint(py_to_json(checkpoint_a), examples, cfg);
    sat::ProbeReport rb = sat::probe_checkpoint(py_to_json(checkpoint_b), examples, cfg);
    json out = {{"a", sat::to_json(ra)}, {"b", sat::to_json(rb)}, {"delta", ra.mean - rb.mean}};
    return json_to_py(out);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Structure-aware fine-tuning toolkit: tree distances, Sinkhorn "
              "structure loss, and a tiny trainable transformer.";

    py::register_exception<sat::Error>(m, "Error");

    m.def("distances", &py_distances, py::arg("source"), py::arg("lang") = "mini",
          "Parse source code and return token and subtoken tree distance matrices.");
    m.def("align", &py_align, py::arg("source"), py::arg("lang") = "mini",
          "Return the subtoken split and each subtoken's owning token index.");
    m.def("sinkhorn_divergence", &py_sinkhorn, py::arg("x"), py::arg("y"),
          py::arg("config") = py::dict(),
          "Debiased entropic divergence between two point clouds given as row lists.");
    m.def("build_toy_corpus", &py_build_corpus, py::arg("n"), py::arg("seed"),
          "Generate the deterministic toy corpus with its train/valid/test split.");
    m.def("train", &py_train, py::arg("config") = py::dict(), py::arg("corpus_size") = 240,
          py::arg("corpus_seed") = 77,
          "Train on the toy corpus; returns records, final metrics and a checkpoint.");
    m.def("probe_checkpoints", &py_probe, py::arg("checkpoint_a"), py::arg("checkpoint_b"),
          py::arg("config") = py::dict(), py::arg("corpus_size") = 240,
          py::arg("corpus_seed") = 77, py::arg("probe_config") = py::dict(),
          "Compare attention-structure agreement of two checkpoints on the held-out split.");
    m.def(
        "smoothed_bleu4",
        [](const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
            return sat::smoothed_bleu4(hyp, ref);
        },
        py::arg("hypothesis"), py::arg("reference"),
        "Sentence-level smoothed BLEU-4 between token sequences, in [0, 100].");
    m.def(
        "exact_match",
        [](const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
            return sat::exact_match(hyp, ref);
        },
        py::arg("hypothesis"), py::arg("reference"),
        "1.0 when the sequences are identical, else 0.0.");
}
