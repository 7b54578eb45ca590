#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cmt/corpus.hpp"
#include "cmt/ranked_list.hpp"

namespace cmt::sparse {

struct Bm25Params {
    double k1 = 0.9;
    double b = 0.4;

    /// Throws ConfigError for k1 < 0 or b outside [0, 1].
    void validate() const;
};

struct Posting {
    std::uint32_t doc = 0;
    std::uint32_t tf = 0;

    bool operator==(const Posting&) const = default;
};

/// Term -> postings over document ordinals, plus the length statistics BM25
/// needs. Immutable after build, so concurrent reads are safe.
class InvertedIndex {
  public:
    /// Throws InvalidInput on an empty corpus and DuplicateError on repeated ids.
    static InvertedIndex build(const std::vector<corpus::Document>& docs);

    std::size_t doc_count() const { return doc_ids_.size(); }
    double avg_doc_length() const { return avg_doc_length_; }
    std::uint64_t total_length() const { return total_length_; }
    const std::vector<std::uint32_t>& doc_lengths() const { return doc_lengths_; }
    const std::vector<std::string>& doc_ids() const { return doc_ids_; }
    const std::string& doc_id(std::uint32_t ordinal) const { return doc_ids_.at(ordinal); }
    std::optional<std::uint32_t> ordinal(const std::string& doc_id) const;

    std::size_t term_count() const { return postings_.size(); }
    std::span<const Posting> postings(std::string_view term) const;
    const std::map<std::string, std::vector<Posting>, std::less<>>& all_postings() const { return postings_; }
    std::uint32_t df(std::string_view term) const { return static_cast<std::uint32_t>(postings(term).size()); }
    /// Frequency of `term` in the document; 0 when absent.
    std::uint32_t tf(std::string_view term, std::uint32_t ordinal) const;

    /// ln(1 + (N - df + 0.5) / (df + 0.5)); always non-negative.
    double idf(std::string_view term) const;

    void save(const std::filesystem::path& path) const;
    static InvertedIndex load(const std::filesystem::path& path);

  private:
    void finalize();

    std::map<std::string, std::vector<Posting>, std::less<>> postings_;
    std::vector<std::uint32_t> doc_lengths_;
    std::vector<std::string> doc_ids_;
    std::unordered_map<std::string, std::uint32_t> ordinals_;
    std::uint64_t total_length_ = 0;
    double avg_doc_length_ = 0.0;
};

/// One term's contribution given its document frequency and in-document tf.
double bm25_term_weight(double idf, std::uint32_t tf, std::uint32_t doc_length, double avg_doc_length,
                        const Bm25Params& params);

/// Sum of term weights over the query terms, in query order.
double bm25_score(const InvertedIndex& index, std::span<const std::string> terms, std::uint32_t ordinal,
                  const Bm25Params& params = {});

/// Top-k documents that contain at least one query term.
RankedList search_topk(const InvertedIndex& index, std::span<const std::string> terms, corpus::QueryId query_id,
                       std::size_t k, const Bm25Params& params = {});

inline RankedList search_topk(const InvertedIndex& index, const corpus::Query& query, std::size_t k,
                              const Bm25Params& params = {})
{
    return search_topk(index, query.terms, query.query_id, k, params);
}

/// Searches every query. Work is split over `threads` workers; the result is
/// independent of the thread count.
Run search_all(const InvertedIndex& index, const std::vector<corpus::Query>& queries, std::size_t k,
               const Bm25Params& params = {}, unsigned threads = 1);

/// Mean over queries with at least one relevant judgment of the fraction of
/// their relevant docs in the top k. Throws InvalidInput if no query qualifies.
double coverage_at_k(const Run& run, const corpus::Qrels& qrels, std::size_t k);

}  // namespace cmt::sparse
