#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace cmt::corpus {

using QueryId = int;
using Date = std::chrono::year_month_day;
using StopwordSet = std::unordered_set<std::string>;

struct Document {
    std::string doc_id;
    std::string title;
    std::string abstract;
    std::optional<Date> publish_date;

    /// Title and abstract joined by one space.
    std::string text() const { return title + " " + abstract; }
};

struct Query {
    QueryId query_id = 0;
    std::string raw_text;
    std::vector<std::string> terms;
};

/// Graded relevance judgments, query -> (doc -> grade).
struct Qrels {
    std::map<QueryId, std::map<std::string, int>> judgments;

    /// Grade of (query, doc); 0 when unjudged.
    int grade(QueryId query, const std::string& doc_id) const;
    bool judged(QueryId query, const std::string& doc_id) const;
    /// Docs with grade > 0.
    std::vector<std::string> relevant(QueryId query) const;
    std::size_t size() const;
};

struct ProcessedQuery {
    std::vector<std::string> terms;
    /// Set when non-empty input reduced to nothing after stopword removal.
    bool all_stopwords = false;
};

/// Lowercases ASCII and splits on runs of non-alphanumeric bytes. Bytes >= 0x80
/// are kept inside words so UTF-8 text is not cut mid-character.
std::vector<std::string> analyze(std::string_view text);

ProcessedQuery preprocess_query(std::string_view raw, const StopwordSet& stopwords);

/// Built-in English stopword list.
const StopwordSet& default_stopwords();
StopwordSet load_stopwords(const std::filesystem::path& path);

/// Reads line-delimited JSON records {"doc_id","title","abstract","date"?}.
std::vector<Document> load_corpus(const std::filesystem::path& path);
std::vector<Document> parse_corpus(std::string_view content);
void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs);

/// Reads "query_id<TAB>raw_text" lines and preprocesses each query.
std::vector<Query> load_queries(const std::filesystem::path& path, const StopwordSet& stopwords);
void write_queries(const std::filesystem::path& path, const std::vector<Query>& queries);

std::optional<Date> parse_date(std::string_view text);
std::string format_date(const Date& date);

struct DateFilterResult {
    std::vector<Document> kept;
    std::vector<Document> excluded;
    double excluded_fraction = 0.0;
};

/// Keeps documents dated on or after `cutoff` and documents without a date.
DateFilterResult date_filter(const std::vector<Document>& docs, const Date& cutoff);

}  // namespace cmt::corpus
