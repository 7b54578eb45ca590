#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cmt/corpus.hpp"
#include "cmt/weaksup.hpp"

namespace cmt::fixtures {

struct TopicFixtureOptions {
    std::size_t topics = 10;
    std::size_t docs_per_topic = 20;
    std::size_t queries_per_topic = 3;
    /// Extra queries on the first topics, numbered after the regular ones.
    std::size_t new_queries = 5;
    std::size_t words_per_topic = 12;
    /// Probability that a document borrows one word from another topic.
    double noise = 0.3;
    std::uint64_t seed = 2020;
};

/// A separable corpus: every topic owns a private vocabulary, documents mix
/// their topic's words with shared general words, and each query is relevant
/// to every document of its topic.
struct TopicFixture {
    std::vector<corpus::Document> docs;
    std::vector<std::string> doc_topics;
    std::vector<corpus::Query> queries;
    /// Topic of each query, parallel to `queries`.
    std::vector<std::size_t> query_topics;
    std::vector<std::vector<std::string>> topic_words;
    corpus::Qrels qrels;
    /// Judgments of an earlier round on the regular (old) queries.
    corpus::Qrels prior_qrels;
    /// Union of `qrels` and `prior_qrels`: every topic document is relevant.
    corpus::Qrels full_qrels;
    /// Highest query id of the regular queries; later ids are new.
    corpus::QueryId last_old_query = 0;
};

TopicFixture topic_fixture(const TopicFixtureOptions& options = {});

/// Writes corpus.jsonl, queries.tsv, qrels.txt, prior_qrels.txt and split.txt.
void write_topic_fixture(const TopicFixture& fixture, const std::filesystem::path& dir);

/// Everyday English sentences.
const std::vector<std::string>& general_texts();
/// Sentences dense in biomedical terminology.
const std::vector<std::string>& terminology_texts();

struct LabelledTriples {
    std::vector<weaksup::WeakTriple> triples;
    /// false for a triple whose positive and negative were swapped.
    std::vector<bool> clean;
};

/// `clean` correct triples (topic query, on-topic positive, off-topic
/// negative) followed by `flipped` triples with the labels swapped.
LabelledTriples selection_triples(const TopicFixture& fixture, std::size_t clean, std::size_t flipped,
                                  std::uint64_t seed);

}  // namespace cmt::fixtures
