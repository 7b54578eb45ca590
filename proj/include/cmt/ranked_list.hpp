#pragma once

#include <map>
#include <string>
#include <vector>

#include "cmt/corpus.hpp"

namespace cmt {

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;

    bool operator==(const ScoredDoc&) const = default;
};

/// Ranking order used everywhere: score descending, then doc_id ascending.
inline bool ranks_before(const ScoredDoc& a, const ScoredDoc& b)
{
    return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
}

struct RankedList {
    corpus::QueryId query_id = 0;
    std::vector<ScoredDoc> entries;

    std::size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }

    /// Sorts entries into ranking order.
    void sort();
    /// Entries strictly ordered by `ranks_before` and doc ids unique.
    bool valid() const;
    std::vector<std::string> doc_ids() const;
    bool operator==(const RankedList&) const = default;
};

struct Run {
    std::map<corpus::QueryId, RankedList> lists;
    std::string tag = "cmt";

    /// Empty list when the query is absent.
    const RankedList& at(corpus::QueryId query) const;
    bool operator==(const Run&) const = default;
};

}  // namespace cmt
