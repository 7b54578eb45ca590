#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cmt/corpus.hpp"
#include "cmt/ranked_list.hpp"

namespace cmt::eval {

using corpus::QueryId;
using Judgments = std::map<std::string, int>;

enum class Gain { Linear, Exponential };

struct NdcgResult {
    double value = 0.0;
    /// The query has no document with grade > 0; value is 0.
    bool no_relevant = false;
    /// Ranked docs within the cutoff that carry no judgment.
    std::size_t unjudged = 0;
};

/// DCG@k = sum_{r<=k} gain(grade_r) / log2(r + 1), normalised by the ideal
/// DCG@k over all judged grades. Unjudged docs count as grade 0.
NdcgResult ndcg_at_k(const RankedList& ranking, const Judgments& judgments, std::size_t k, Gain gain = Gain::Linear);

/// Docs with grade > 0 in the top k, divided by k.
double precision_at_k(const RankedList& ranking, const Judgments& judgments, std::size_t k);

/// Judgments of one query; empty when absent.
const Judgments& judgments_for(const corpus::Qrels& qrels, QueryId query);

/// Mean NDCG@k over every query in `qrels`.
double mean_ndcg(const Run& run, const corpus::Qrels& qrels, std::size_t k, Gain gain = Gain::Linear);

struct QuerySplit {
    std::set<QueryId> old_ids;
    std::set<QueryId> new_ids;

    bool is_old(QueryId q) const { return old_ids.contains(q); }
    bool covers(QueryId q) const { return old_ids.contains(q) || new_ids.contains(q); }
    /// Throws InvalidInput when a query is both old and new.
    void validate() const;

    /// Ids <= last_old are old, the rest new.
    static QuerySplit by_threshold(const std::set<QueryId>& ids, QueryId last_old);
    /// Lines of "query_id old|new".
    static QuerySplit load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

/// For old queries, drops every doc judged in `prior` and renumbers the rest.
/// New queries pass through unchanged.
Run residual_filter(const Run& run, const corpus::Qrels& prior, const QuerySplit& split);

struct ReportOptions {
    std::size_t k = 10;
    Gain gain = Gain::Linear;
    /// Leave queries without relevant docs out of the group means.
    bool skip_unjudgeable = false;
};

struct GroupMetrics {
    std::size_t queries = 0;
    double ndcg = 0.0;
    double p5 = 0.0;
};

struct QueryMetrics {
    QueryId query_id = 0;
    /// "old", "new", or "all" when no split applies.
    std::string group;
    double ndcg = 0.0;
    double p5 = 0.0;
    bool no_relevant = false;
    std::size_t unjudged = 0;
};

struct Report {
    std::string tag;
    std::size_t k = 10;
    std::optional<GroupMetrics> overall;
    std::optional<GroupMetrics> old_queries;
    std::optional<GroupMetrics> new_queries;
    std::vector<QueryMetrics> per_query;

    /// Aligned text table: group summary followed by per-query rows.
    std::string format_table() const;
    /// One JSON record per group and per query.
    std::string format_jsonl() const;
};

/// Metrics over every query in `qrels` with no old/new breakdown.
Report evaluate(const Run& run, const corpus::Qrels& qrels, const ReportOptions& options = {});

/// Overall, old-only and new-only NDCG@k and P@5. An empty group is absent.
/// Throws InvalidInput when the split does not cover a judged query.
Report old_new_report(const Run& run, const corpus::Qrels& qrels, const QuerySplit& split,
                      const ReportOptions& options = {});

/// "query_id Q0 doc_id rank score tag", score with 6 decimals.
std::string format_run(const Run& run);
void write_run(const std::filesystem::path& path, const Run& run);

/// Non-contiguous ranks are renumbered and reported through `warnings`.
Run parse_run(std::string_view content, std::vector<std::string>* warnings = nullptr);
Run read_run(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

/// "query_id 0 doc_id grade"; a repeated pair keeps the last grade and warns.
corpus::Qrels parse_qrels(std::string_view content, std::vector<std::string>* warnings = nullptr);
corpus::Qrels read_qrels(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
void write_qrels(const std::filesystem::path& path, const corpus::Qrels& qrels);

}  // namespace cmt::eval
