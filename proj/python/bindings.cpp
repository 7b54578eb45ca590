#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cmt/corpus.hpp"
#include "cmt/dapt.hpp"
#include "cmt/error.hpp"
#include "cmt/eval.hpp"
#include "cmt/fixtures.hpp"
#include "cmt/pipeline.hpp"
#include "cmt/rerank.hpp"
#include "cmt/sparse.hpp"
#include "cmt/subword.hpp"
#include "cmt/weaksup.hpp"

namespace py = pybind11;
using namespace cmt;

namespace {

using Scored = std::vector<std::pair<std::string, double>>;

Scored to_pairs(const RankedList& list)
{
    Scored out;
    out.reserve(list.size());
    for (const auto& e : list.entries) {
        out.emplace_back(e.doc_id, e.score);
    }
    return out;
}

RankedList from_ids(const std::vector<std::string>& ids)
{
    RankedList list;
    double score = static_cast<double>(ids.size());
    for (const auto& id : ids) {
        list.entries.push_back({id, score--});
    }
    return list;
}

eval::Gain parse_gain(const std::string& name)
{
    if (name == "linear") {
        return eval::Gain::Linear;
    }
    if (name == "exp") {
        return eval::Gain::Exponential;
    }
    throw ConfigError("gain must be linear or exp");
}

}  // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "BM25, subword tokenization, metrics, fusion and the staged pipeline";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DependencyError>(m, "DependencyError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());

    py::class_<corpus::Document>(m, "Document")
        .def(py::init([](std::string id, std::string title, std::string abstract) {
                 return corpus::Document{std::move(id), std::move(title), std::move(abstract), std::nullopt};
             }),
             py::arg("doc_id"), py::arg("title"), py::arg("abstract"))
        .def_readwrite("doc_id", &corpus::Document::doc_id)
        .def_readwrite("title", &corpus::Document::title)
        .def_readwrite("abstract", &corpus::Document::abstract)
        .def("text", &corpus::Document::text);

    m.def("analyze", [](const std::string& text) { return corpus::analyze(text); }, py::arg("text"));
    m.def(
        "preprocess_query",
        [](const std::string& text) { return corpus::preprocess_query(text, corpus::default_stopwords()).terms; },
        py::arg("text"), "Analyzed query terms with the built-in stopwords removed.");

    py::class_<corpus::SubwordVocab>(m, "SubwordVocab")
        .def("__len__", &corpus::SubwordVocab::size)
        .def("piece", &corpus::SubwordVocab::piece)
        .def("contains", &corpus::SubwordVocab::contains)
        .def("save", &corpus::SubwordVocab::save)
        .def_static("load", &corpus::SubwordVocab::load);
    m.def(
        "train_subword_vocab",
        [](const std::vector<std::string>& texts, std::size_t size) { return corpus::train_subword_vocab(texts, size); },
        py::arg("texts"), py::arg("target_size"));
    m.def(
        "tokenize",
        [](const std::string& text, const corpus::SubwordVocab& vocab, std::size_t max_length) {
            return corpus::tokenize(text, vocab, max_length);
        },
        py::arg("text"), py::arg("vocab"), py::arg("max_length") = corpus::kDefaultMaxSequenceLength);
    m.def(
        "subword_ratio",
        [](const std::vector<std::string>& texts, const corpus::SubwordVocab& vocab) {
            return corpus::subword_ratio(texts, vocab);
        },
        py::arg("texts"), py::arg("vocab"));

    py::class_<sparse::InvertedIndex>(m, "InvertedIndex")
        .def_static("build", &sparse::InvertedIndex::build, py::arg("docs"))
        .def_static("load", &sparse::InvertedIndex::load)
        .def("save", &sparse::InvertedIndex::save)
        .def_property_readonly("doc_count", &sparse::InvertedIndex::doc_count)
        .def_property_readonly("avg_doc_length", &sparse::InvertedIndex::avg_doc_length)
        .def("df", [](const sparse::InvertedIndex& ix, const std::string& t) { return ix.df(t); })
        .def("idf", [](const sparse::InvertedIndex& ix, const std::string& t) { return ix.idf(t); })
        .def(
            "score",
            [](const sparse::InvertedIndex& ix, const std::vector<std::string>& terms, const std::string& doc_id,
               double k1, double b) {
                auto ord = ix.ordinal(doc_id);
                if (!ord) {
                    throw InvalidInput("unknown doc_id " + doc_id);
                }
                return sparse::bm25_score(ix, terms, *ord, {k1, b});
            },
            py::arg("terms"), py::arg("doc_id"), py::arg("k1") = 0.9, py::arg("b") = 0.4)
        .def(
            "search",
            [](const sparse::InvertedIndex& ix, const std::vector<std::string>& terms, std::size_t k, double k1,
               double b) { return to_pairs(sparse::search_topk(ix, terms, 0, k, {k1, b})); },
            py::arg("terms"), py::arg("k") = 10, py::arg("k1") = 0.9, py::arg("b") = 0.4,
            "Top-k (doc_id, score) pairs, score descending then doc_id ascending.");

    m.def(
        "ndcg_at_k",
        [](const std::vector<std::string>& ranking, const std::map<std::string, int>& grades, std::size_t k,
           const std::string& gain) { return eval::ndcg_at_k(from_ids(ranking), grades, k, parse_gain(gain)).value; },
        py::arg("ranking"), py::arg("grades"), py::arg("k") = 10, py::arg("gain") = "linear");
    m.def(
        "precision_at_k",
        [](const std::vector<std::string>& ranking, const std::map<std::string, int>& grades, std::size_t k) {
            return eval::precision_at_k(from_ids(ranking), grades, k);
        },
        py::arg("ranking"), py::arg("grades"), py::arg("k") = 5);
    m.def(
        "reciprocal_rank_fusion",
        [](const std::vector<std::vector<std::string>>& rankings, std::size_t k, int rrf_k) {
            std::vector<RankedList> lists;
            for (const auto& r : rankings) {
                lists.push_back(from_ids(r));
            }
            return to_pairs(rerank::reciprocal_rank_fusion(lists, k, rrf_k));
        },
        py::arg("rankings"), py::arg("k") = 1000, py::arg("rrf_k") = 60);
    m.def("mask_count", &dapt::mask_count, py::arg("n"), py::arg("rate") = dapt::kDefaultMaskRate);

    m.def(
        "make_fixture",
        [](const std::filesystem::path& dir, std::uint64_t seed) {
            fixtures::TopicFixtureOptions opts;
            opts.seed = seed;
            fixtures::write_topic_fixture(fixtures::topic_fixture(opts), dir);
        },
        py::arg("directory"), py::arg("seed") = 2020,
        "Writes the synthetic topic corpus, queries, qrels, prior qrels and split file.");
    m.def(
        "run_pipeline",
        [](const std::map<std::string, std::string>& settings, const std::vector<std::string>& stages,
           const std::optional<std::filesystem::path>& config) {
            auto cfg = config ? pipeline::PipelineConfig::load(*config) : pipeline::PipelineConfig{};
            for (const auto& [key, value] : settings) {
                cfg.set(key, value);
            }
            std::vector<std::string> done;
            {
                py::gil_scoped_release release;
                for (const auto& r : pipeline::run_pipeline(cfg, stages)) {
                    done.push_back(r.stage);
                }
            }
            return done;
        },
        py::arg("settings"), py::arg("stages"), py::arg("config") = py::none(),
        "Runs the given stages; returns the stages completed, in order.");
}
