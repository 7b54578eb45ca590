#include "cmt/corpus.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "cmt/error.hpp"

namespace cmt::corpus {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DependencyError("cannot open: " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string required_string(const nlohmann::json& record, const char* key, std::size_t line)
{
    auto it = record.find(key);
    if (it == record.end() || !it->is_string()) {
        throw ParseError(std::string("missing string field \"") + key + "\"", line);
    }
    return it->get<std::string>();
}

}  // namespace

int Qrels::grade(QueryId query, const std::string& doc_id) const
{
    auto q = judgments.find(query);
    if (q == judgments.end()) {
        return 0;
    }
    auto d = q->second.find(doc_id);
    return d == q->second.end() ? 0 : d->second;
}

bool Qrels::judged(QueryId query, const std::string& doc_id) const
{
    auto q = judgments.find(query);
    return q != judgments.end() && q->second.contains(doc_id);
}

std::vector<std::string> Qrels::relevant(QueryId query) const
{
    std::vector<std::string> out;
    auto q = judgments.find(query);
    if (q == judgments.end()) {
        return out;
    }
    for (const auto& [doc, g] : q->second) {
        if (g > 0) {
            out.push_back(doc);
        }
    }
    return out;
}

std::size_t Qrels::size() const
{
    std::size_t n = 0;
    for (const auto& [q, docs] : judgments) {
        n += docs.size();
    }
    return n;
}

std::vector<std::string> analyze(std::string_view text)
{
    std::vector<std::string> words;
    std::string current;
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (is_word_byte(c)) {
            current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        } else if (!current.empty()) {
            words.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        words.push_back(std::move(current));
    }
    return words;
}

ProcessedQuery preprocess_query(std::string_view raw, const StopwordSet& stopwords)
{
    ProcessedQuery out;
    auto words = analyze(raw);
    for (auto& w : words) {
        if (!stopwords.contains(w)) {
            out.terms.push_back(std::move(w));
        }
    }
    out.all_stopwords = !words.empty() && out.terms.empty();
    return out;
}

StopwordSet load_stopwords(const std::filesystem::path& path)
{
    std::istringstream in(read_file(path));
    StopwordSet out;
    std::string line;
    while (std::getline(in, line)) {
        for (auto& w : analyze(line)) {
            out.insert(std::move(w));
        }
    }
    return out;
}

std::optional<Date> parse_date(std::string_view text)
{
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
        return std::nullopt;
    }
    int y = 0;
    unsigned m = 0, d = 0;
    auto ok = [](auto res, const char* end) { return res.ec == std::errc{} && res.ptr == end; };
    const char* s = text.data();
    if (!ok(std::from_chars(s, s + 4, y), s + 4) || !ok(std::from_chars(s + 5, s + 7, m), s + 7) ||
        !ok(std::from_chars(s + 8, s + 10, d), s + 10)) {
        return std::nullopt;
    }
    Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!date.ok()) {
        return std::nullopt;
    }
    return date;
}

std::string format_date(const Date& date)
{
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(date.year()),
                  static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
    return buf;
}

std::vector<Document> parse_corpus(std::string_view content)
{
    std::vector<Document> docs;
    std::unordered_map<std::string, std::size_t> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        auto end = content.find('\n', pos);
        if (end == std::string_view::npos) {
            end = content.size();
        }
        auto line = content.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.find_first_not_of(" \t") == std::string_view::npos) {
            continue;
        }
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("malformed record: ") + e.what(), line_no);
        }
        if (!record.is_object()) {
            throw ParseError("record is not an object", line_no);
        }
        Document doc;
        doc.doc_id = required_string(record, "doc_id", line_no);
        doc.title = required_string(record, "title", line_no);
        doc.abstract = required_string(record, "abstract", line_no);
        if (doc.doc_id.empty()) {
            throw ParseError("empty doc_id", line_no);
        }
        if (auto it = record.find("date"); it != record.end() && !it->is_null()) {
            if (!it->is_string()) {
                throw ParseError("date must be a YYYY-MM-DD string", line_no);
            }
            auto s = it->get<std::string>();
            if (!s.empty()) {
                doc.publish_date = parse_date(s);
                if (!doc.publish_date) {
                    throw ParseError("bad date \"" + s + "\"", line_no);
                }
            }
        }
        if (auto [it, inserted] = seen.emplace(doc.doc_id, line_no); !inserted) {
            throw DuplicateError("duplicate doc_id \"" + doc.doc_id + "\" (first seen on line " +
                                     std::to_string(it->second) + ")",
                                 line_no);
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

std::vector<Document> load_corpus(const std::filesystem::path& path) { return parse_corpus(read_file(path)); }

void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open for writing: " + path.string());
    }
    for (const auto& d : docs) {
        nlohmann::ordered_json rec;
        rec["doc_id"] = d.doc_id;
        rec["title"] = d.title;
        rec["abstract"] = d.abstract;
        if (d.publish_date) {
            rec["date"] = format_date(*d.publish_date);
        }
        out << rec.dump() << '\n';
    }
}

std::vector<Query> load_queries(const std::filesystem::path& path, const StopwordSet& stopwords)
{
    std::istringstream in(read_file(path));
    std::vector<Query> queries;
    std::set<QueryId> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError("expected query_id<TAB>text", line_no);
        }
        Query q;
        auto res = std::from_chars(line.data(), line.data() + tab, q.query_id);
        if (res.ec != std::errc{} || res.ptr != line.data() + tab || q.query_id <= 0) {
            throw ParseError("query_id must be a positive integer", line_no);
        }
        if (!seen.insert(q.query_id).second) {
            throw DuplicateError("duplicate query_id " + std::to_string(q.query_id), line_no);
        }
        q.raw_text = line.substr(tab + 1);
        q.terms = preprocess_query(q.raw_text, stopwords).terms;
        queries.push_back(std::move(q));
    }
    return queries;
}

void write_queries(const std::filesystem::path& path, const std::vector<Query>& queries)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open for writing: " + path.string());
    }
    for (const auto& q : queries) {
        out << q.query_id << '\t' << q.raw_text << '\n';
    }
}

DateFilterResult date_filter(const std::vector<Document>& docs, const Date& cutoff)
{
    DateFilterResult out;
    for (const auto& d : docs) {
        if (!d.publish_date || *d.publish_date >= cutoff) {
            out.kept.push_back(d);
        } else {
            out.excluded.push_back(d);
        }
    }
    out.excluded_fraction =
        docs.empty() ? 0.0 : static_cast<double>(out.excluded.size()) / static_cast<double>(docs.size());
    return out;
}

}  // namespace cmt::corpus
