#include "cmt/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "cmt/error.hpp"

namespace cmt::eval {

namespace {

double gain_of(int grade, Gain gain)
{
    if (grade <= 0) {
        return 0.0;
    }
    return gain == Gain::Linear ? static_cast<double>(grade) : std::exp2(static_cast<double>(grade)) - 1.0;
}

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

std::vector<std::string_view> split_ws(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) {
            ++i;
        }
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') {
            ++j;
        }
        if (j > i) {
            out.push_back(line.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out)
{
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

template <typename Fn>
void for_each_line(std::string_view content, Fn&& fn)
{
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < content.size()) {
        auto end = content.find('\n', pos);
        if (end == std::string_view::npos) {
            end = content.size();
        }
        ++line_no;
        fn(content.substr(pos, end - pos), line_no);
        pos = end + 1;
    }
}

std::string fixed(double v, int decimals)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

GroupMetrics mean_of(const std::vector<const QueryMetrics*>& rows)
{
    GroupMetrics g;
    g.queries = rows.size();
    for (const auto* r : rows) {
        g.ndcg += r->ndcg;
        g.p5 += r->p5;
    }
    if (!rows.empty()) {
        g.ndcg /= static_cast<double>(rows.size());
        g.p5 /= static_cast<double>(rows.size());
    }
    return g;
}

Report build_report(const Run& run, const corpus::Qrels& qrels, const QuerySplit* split, const ReportOptions& options)
{
    if (options.k == 0) {
        throw ConfigError("k must be at least 1");
    }
    Report report;
    report.tag = run.tag;
    report.k = options.k;
    for (const auto& [qid, judged] : qrels.judgments) {
        if (split && !split->covers(qid)) {
            throw InvalidInput("query split does not cover judged query " + std::to_string(qid));
        }
        const auto& list = run.at(qid);
        auto nd = ndcg_at_k(list, judged, options.k, options.gain);
        QueryMetrics m;
        m.query_id = qid;
        m.group = split ? (split->is_old(qid) ? "old" : "new") : "all";
        m.ndcg = nd.value;
        m.no_relevant = nd.no_relevant;
        m.unjudged = nd.unjudged;
        m.p5 = precision_at_k(list, judged, 5);
        report.per_query.push_back(std::move(m));
    }
    std::vector<const QueryMetrics*> all, old_rows, new_rows;
    for (const auto& m : report.per_query) {
        if (options.skip_unjudgeable && m.no_relevant) {
            continue;
        }
        all.push_back(&m);
        if (split) {
            (m.group == "old" ? old_rows : new_rows).push_back(&m);
        }
    }
    if (!all.empty()) {
        report.overall = mean_of(all);
    }
    if (!old_rows.empty()) {
        report.old_queries = mean_of(old_rows);
    }
    if (!new_rows.empty()) {
        report.new_queries = mean_of(new_rows);
    }
    return report;
}

}  // namespace

NdcgResult ndcg_at_k(const RankedList& ranking, const Judgments& judgments, std::size_t k, Gain gain)
{
    if (k == 0) {
        throw ConfigError("k must be at least 1");
    }
    NdcgResult out;
    std::vector<int> grades;
    for (const auto& [doc, g] : judgments) {
        if (g > 0) {
            grades.push_back(g);
        }
    }
    if (grades.empty()) {
        out.no_relevant = true;
    }
    double dcg = 0.0;
    const std::size_t depth = std::min(k, ranking.size());
    for (std::size_t r = 0; r < depth; ++r) {
        auto it = judgments.find(ranking.entries[r].doc_id);
        if (it == judgments.end()) {
            ++out.unjudged;
            continue;
        }
        dcg += gain_of(it->second, gain) / std::log2(static_cast<double>(r) + 2.0);
    }
    if (out.no_relevant) {
        return out;
    }
    std::sort(grades.begin(), grades.end(), std::greater<>());
    double ideal = 0.0;
    for (std::size_t r = 0; r < std::min(k, grades.size()); ++r) {
        ideal += gain_of(grades[r], gain) / std::log2(static_cast<double>(r) + 2.0);
    }
    out.value = dcg / ideal;
    return out;
}

double precision_at_k(const RankedList& ranking, const Judgments& judgments, std::size_t k)
{
    if (k == 0) {
        throw ConfigError("k must be at least 1");
    }
    std::size_t hits = 0;
    for (std::size_t r = 0; r < std::min(k, ranking.size()); ++r) {
        auto it = judgments.find(ranking.entries[r].doc_id);
        if (it != judgments.end() && it->second > 0) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(k);
}

const Judgments& judgments_for(const corpus::Qrels& qrels, QueryId query)
{
    static const Judgments empty;
    auto it = qrels.judgments.find(query);
    return it == qrels.judgments.end() ? empty : it->second;
}

double mean_ndcg(const Run& run, const corpus::Qrels& qrels, std::size_t k, Gain gain)
{
    if (qrels.judgments.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (const auto& [qid, judged] : qrels.judgments) {
        total += ndcg_at_k(run.at(qid), judged, k, gain).value;
    }
    return total / static_cast<double>(qrels.judgments.size());
}

void QuerySplit::validate() const
{
    for (auto q : old_ids) {
        if (new_ids.contains(q)) {
            throw InvalidInput("query " + std::to_string(q) + " is both old and new");
        }
    }
}

QuerySplit QuerySplit::by_threshold(const std::set<QueryId>& ids, QueryId last_old)
{
    QuerySplit split;
    for (auto q : ids) {
        (q <= last_old ? split.old_ids : split.new_ids).insert(q);
    }
    return split;
}

QuerySplit QuerySplit::load(const std::filesystem::path& path)
{
    QuerySplit split;
    for_each_line(read_file(path), [&](std::string_view line, std::size_t line_no) {
        auto f = split_ws(line);
        if (f.empty()) {
            return;
        }
        QueryId q = 0;
        if (f.size() != 2 || !parse_number(f[0], q)) {
            throw ParseError("expected \"query_id old|new\"", line_no);
        }
        if (f[1] == "old") {
            split.old_ids.insert(q);
        } else if (f[1] == "new") {
            split.new_ids.insert(q);
        } else {
            throw ParseError("group must be old or new", line_no);
        }
    });
    split.validate();
    return split;
}

void QuerySplit::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    std::map<QueryId, const char*> rows;
    for (auto q : old_ids) {
        rows[q] = "old";
    }
    for (auto q : new_ids) {
        rows[q] = "new";
    }
    for (const auto& [q, g] : rows) {
        out << q << ' ' << g << '\n';
    }
}

Run residual_filter(const Run& run, const corpus::Qrels& prior, const QuerySplit& split)
{
    Run out;
    out.tag = run.tag;
    for (const auto& [qid, list] : run.lists) {
        if (!split.is_old(qid)) {
            out.lists[qid] = list;
            continue;
        }
        RankedList residual;
        residual.query_id = qid;
        for (const auto& e : list.entries) {
            if (!prior.judged(qid, e.doc_id)) {
                residual.entries.push_back(e);
            }
        }
        out.lists[qid] = std::move(residual);
    }
    return out;
}

Report evaluate(const Run& run, const corpus::Qrels& qrels, const ReportOptions& options)
{
    return build_report(run, qrels, nullptr, options);
}

Report old_new_report(const Run& run, const corpus::Qrels& qrels, const QuerySplit& split,
                      const ReportOptions& options)
{
    split.validate();
    return build_report(run, qrels, &split, options);
}

std::string Report::format_table() const
{
    std::ostringstream out;
    const std::string ndcg_col = "NDCG@" + std::to_string(k);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-10s %8s %10s %8s\n", "group", "queries", ndcg_col.c_str(), "P@5");
    out << buf;
    auto row = [&](const char* name, const std::optional<GroupMetrics>& g) {
        if (g) {
            std::snprintf(buf, sizeof(buf), "%-10s %8zu %10.4f %8.4f\n", name, g->queries, g->ndcg, g->p5);
        } else {
            std::snprintf(buf, sizeof(buf), "%-10s %8s %10s %8s\n", name, "-", "absent", "absent");
        }
        out << buf;
    };
    row("overall", overall);
    if (old_queries || new_queries) {
        row("old", old_queries);
        row("new", new_queries);
    }
    out << '\n';
    std::snprintf(buf, sizeof(buf), "%-8s %-6s %10s %8s %s\n", "query", "group", ndcg_col.c_str(), "P@5", "note");
    out << buf;
    for (const auto& m : per_query) {
        std::snprintf(buf, sizeof(buf), "%-8d %-6s %10.4f %8.4f %s\n", m.query_id, m.group.c_str(), m.ndcg, m.p5,
                      m.no_relevant ? "no-relevant" : "");
        out << buf;
    }
    return out.str();
}

std::string Report::format_jsonl() const
{
    std::ostringstream out;
    auto group = [&](const char* name, const std::optional<GroupMetrics>& g) {
        nlohmann::ordered_json rec;
        rec["type"] = "group";
        rec["group"] = name;
        rec["tag"] = tag;
        rec["k"] = k;
        if (g) {
            rec["queries"] = g->queries;
            rec["ndcg"] = g->ndcg;
            rec["p5"] = g->p5;
        } else {
            rec["absent"] = true;
        }
        out << rec.dump() << '\n';
    };
    group("overall", overall);
    if (old_queries || new_queries) {
        group("old", old_queries);
        group("new", new_queries);
    }
    for (const auto& m : per_query) {
        nlohmann::ordered_json rec;
        rec["type"] = "query";
        rec["query_id"] = m.query_id;
        rec["group"] = m.group;
        rec["ndcg"] = m.ndcg;
        rec["p5"] = m.p5;
        rec["no_relevant"] = m.no_relevant;
        rec["unjudged"] = m.unjudged;
        out << rec.dump() << '\n';
    }
    return out.str();
}

std::string format_run(const Run& run)
{
    std::string out;
    for (const auto& [qid, list] : run.lists) {
        for (std::size_t i = 0; i < list.entries.size(); ++i) {
            const auto& e = list.entries[i];
            out += std::to_string(qid);
            out += " Q0 ";
            out += e.doc_id;
            out += ' ';
            out += std::to_string(i + 1);
            out += ' ';
            out += fixed(e.score, 6);
            out += ' ';
            out += run.tag;
            out += '\n';
        }
    }
    return out;
}

void write_run(const std::filesystem::path& path, const Run& run)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open for writing: " + path.string());
    }
    out << format_run(run);
}

Run parse_run(std::string_view content, std::vector<std::string>* warnings)
{
    struct Row {
        long rank;
        ScoredDoc doc;
    };
    std::map<QueryId, std::vector<Row>> rows;
    std::map<QueryId, std::unordered_set<std::string>> seen;
    Run run;
    bool have_tag = false;
    for_each_line(content, [&](std::string_view line, std::size_t line_no) {
        auto f = split_ws(line);
        if (f.empty()) {
            return;
        }
        if (f.size() != 6) {
            throw ParseError("expected 6 fields \"query_id Q0 doc_id rank score tag\"", line_no);
        }
        QueryId q = 0;
        long rank = 0;
        double score = 0.0;
        if (!parse_number(f[0], q)) {
            throw ParseError("bad query_id", line_no);
        }
        if (!parse_number(f[3], rank) || rank < 1) {
            throw ParseError("bad rank", line_no);
        }
        if (!parse_number(f[4], score) || !std::isfinite(score)) {
            throw ParseError("bad score", line_no);
        }
        std::string doc(f[2]);
        if (!seen[q].insert(doc).second) {
            throw ParseError("doc \"" + doc + "\" listed twice for query " + std::to_string(q), line_no);
        }
        if (!have_tag) {
            run.tag = std::string(f[5]);
            have_tag = true;
        }
        rows[q].push_back({rank, {std::move(doc), score}});
    });
    for (auto& [q, list] : rows) {
        std::stable_sort(list.begin(), list.end(), [](const Row& a, const Row& b) { return a.rank < b.rank; });
        RankedList rl;
        rl.query_id = q;
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (list[i].rank != static_cast<long>(i + 1) && warnings) {
                warnings->push_back("query " + std::to_string(q) + ": ranks not contiguous, renumbered");
                warnings = nullptr;  // warn once
            }
            rl.entries.push_back(std::move(list[i].doc));
        }
        run.lists[q] = std::move(rl);
    }
    return run;
}

Run read_run(const std::filesystem::path& path, std::vector<std::string>* warnings)
{
    return parse_run(read_file(path), warnings);
}

corpus::Qrels parse_qrels(std::string_view content, std::vector<std::string>* warnings)
{
    corpus::Qrels qrels;
    for_each_line(content, [&](std::string_view line, std::size_t line_no) {
        auto f = split_ws(line);
        if (f.empty()) {
            return;
        }
        QueryId q = 0;
        int grade = 0;
        if (f.size() != 4 || !parse_number(f[0], q) || !parse_number(f[3], grade)) {
            throw ParseError("expected \"query_id 0 doc_id grade\"", line_no);
        }
        if (grade < 0) {
            // TREC-COVID marks some pairs with -1; they carry no relevance.
            grade = 0;
        }
        auto [it, inserted] = qrels.judgments[q].insert_or_assign(std::string(f[2]), grade);
        if (!inserted && warnings) {
            warnings->push_back("line " + std::to_string(line_no) + ": duplicate judgment for (" +
                                std::to_string(q) + ", " + it->first + "), keeping the last grade");
        }
    });
    return qrels;
}

corpus::Qrels read_qrels(const std::filesystem::path& path, std::vector<std::string>* warnings)
{
    return parse_qrels(read_file(path), warnings);
}

void write_qrels(const std::filesystem::path& path, const corpus::Qrels& qrels)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open for writing: " + path.string());
    }
    for (const auto& [q, docs] : qrels.judgments) {
        for (const auto& [doc, grade] : docs) {
            out << q << " 0 " << doc << ' ' << grade << '\n';
        }
    }
}

}  // namespace cmt::eval
