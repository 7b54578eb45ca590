#include "cmt/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <thread>

#include "cmt/binary_io.hpp"
#include "cmt/error.hpp"

namespace cmt::sparse {

namespace {

constexpr std::string_view kIndexMagic = "CMTBM25I";
constexpr std::uint32_t kIndexVersion = 1;

}  // namespace

void Bm25Params::validate() const
{
    if (!(k1 >= 0.0) || !std::isfinite(k1)) {
        throw ConfigError("k1 must be a finite non-negative number");
    }
    if (!(b >= 0.0 && b <= 1.0)) {
        throw ConfigError("b must lie in [0, 1]");
    }
}

InvertedIndex InvertedIndex::build(const std::vector<corpus::Document>& docs)
{
    if (docs.empty()) {
        throw InvalidInput("cannot build an index over an empty corpus");
    }
    InvertedIndex index;
    index.doc_ids_.reserve(docs.size());
    index.doc_lengths_.reserve(docs.size());
    std::map<std::string, std::uint32_t, std::less<>> counts;
    for (std::uint32_t ord = 0; ord < docs.size(); ++ord) {
        const auto& doc = docs[ord];
        if (!index.ordinals_.emplace(doc.doc_id, ord).second) {
            throw DuplicateError("duplicate doc_id \"" + doc.doc_id + "\"");
        }
        index.doc_ids_.push_back(doc.doc_id);
        auto terms = corpus::analyze(doc.text());
        index.doc_lengths_.push_back(static_cast<std::uint32_t>(terms.size()));
        counts.clear();
        for (auto& t : terms) {
            ++counts[t];
        }
        for (const auto& [term, tf] : counts) {
            index.postings_[term].push_back({ord, tf});
        }
    }
    index.finalize();
    return index;
}

void InvertedIndex::finalize()
{
    total_length_ = 0;
    for (auto len : doc_lengths_) {
        total_length_ += len;
    }
    avg_doc_length_ = static_cast<double>(total_length_) / static_cast<double>(doc_lengths_.size());
    ordinals_.clear();
    for (std::uint32_t ord = 0; ord < doc_ids_.size(); ++ord) {
        ordinals_.emplace(doc_ids_[ord], ord);
    }
}

std::optional<std::uint32_t> InvertedIndex::ordinal(const std::string& doc_id) const
{
    auto it = ordinals_.find(doc_id);
    if (it == ordinals_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::span<const Posting> InvertedIndex::postings(std::string_view term) const
{
    auto it = postings_.find(term);
    if (it == postings_.end()) {
        return {};
    }
    return it->second;
}

std::uint32_t InvertedIndex::tf(std::string_view term, std::uint32_t ordinal) const
{
    auto list = postings(term);
    auto it = std::lower_bound(list.begin(), list.end(), ordinal,
                               [](const Posting& p, std::uint32_t doc) { return p.doc < doc; });
    return it != list.end() && it->doc == ordinal ? it->tf : 0;
}

double InvertedIndex::idf(std::string_view term) const
{
    const double n = static_cast<double>(doc_count());
    const double df = static_cast<double>(this->df(term));
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

void InvertedIndex::save(const std::filesystem::path& path) const
{
    io::BinaryWriter out(path);
    out.magic(kIndexMagic);
    out.put(kIndexVersion);
    out.put<std::uint64_t>(doc_ids_.size());
    for (const auto& id : doc_ids_) {
        out.put_string(id);
    }
    out.put_array(doc_lengths_.data(), doc_lengths_.size());
    out.put<std::uint64_t>(postings_.size());
    for (const auto& [term, list] : postings_) {
        out.put_string(term);
        out.put<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
        for (const auto& p : list) {
            out.put(p.doc);
            out.put(p.tf);
        }
    }
    out.finish();
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path)
{
    io::BinaryReader in(path);
    in.expect_magic(kIndexMagic);
    if (auto v = in.get<std::uint32_t>(); v != kIndexVersion) {
        throw ParseError(path.string() + ": unsupported index version " + std::to_string(v));
    }
    InvertedIndex index;
    auto n_docs = in.get<std::uint64_t>();
    if (n_docs == 0) {
        throw ParseError(path.string() + ": index has no documents");
    }
    index.doc_ids_.resize(n_docs);
    for (auto& id : index.doc_ids_) {
        id = in.get_string();
    }
    index.doc_lengths_.resize(n_docs);
    in.get_array(index.doc_lengths_.data(), n_docs);
    auto n_terms = in.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_terms; ++i) {
        auto term = in.get_string();
        auto n = in.get<std::uint32_t>();
        std::vector<Posting> list(n);
        for (auto& p : list) {
            p.doc = in.get<std::uint32_t>();
            p.tf = in.get<std::uint32_t>();
            if (p.doc >= n_docs) {
                throw ParseError(path.string() + ": posting ordinal out of range");
            }
        }
        index.postings_.emplace(std::move(term), std::move(list));
    }
    index.finalize();
    return index;
}

double bm25_term_weight(double idf, std::uint32_t tf, std::uint32_t doc_length, double avg_doc_length,
                        const Bm25Params& params)
{
    const double f = static_cast<double>(tf);
    const double norm = 1.0 - params.b + params.b * static_cast<double>(doc_length) / avg_doc_length;
    return idf * f * (params.k1 + 1.0) / (f + params.k1 * norm);
}

double bm25_score(const InvertedIndex& index, std::span<const std::string> terms, std::uint32_t ordinal,
                  const Bm25Params& params)
{
    double score = 0.0;
    const auto len = index.doc_lengths().at(ordinal);
    for (const auto& t : terms) {
        auto tf = index.tf(t, ordinal);
        if (tf > 0) {
            score += bm25_term_weight(index.idf(t), tf, len, index.avg_doc_length(), params);
        }
    }
    return score;
}

RankedList search_topk(const InvertedIndex& index, std::span<const std::string> terms, corpus::QueryId query_id,
                       std::size_t k, const Bm25Params& params)
{
    if (k == 0) {
        throw ConfigError("k must be at least 1");
    }
    RankedList out;
    out.query_id = query_id;
    std::vector<double> acc(index.doc_count(), 0.0);
    std::vector<std::uint32_t> touched;
    std::vector<char> hit(index.doc_count(), 0);
    const auto& lengths = index.doc_lengths();
    for (const auto& t : terms) {
        auto list = index.postings(t);
        if (list.empty()) {
            continue;
        }
        const double idf = index.idf(t);
        for (const auto& p : list) {
            acc[p.doc] += bm25_term_weight(idf, p.tf, lengths[p.doc], index.avg_doc_length(), params);
            if (!hit[p.doc]) {
                hit[p.doc] = 1;
                touched.push_back(p.doc);
            }
        }
    }

    // Min-heap on ranking order: the top holds the weakest of the current best k.
    auto worse = [](const ScoredDoc& a, const ScoredDoc& b) { return ranks_before(a, b); };
    std::priority_queue<ScoredDoc, std::vector<ScoredDoc>, decltype(worse)> heap(worse);
    for (auto doc : touched) {
        ScoredDoc cand{index.doc_id(doc), acc[doc]};
        if (heap.size() < k) {
            heap.push(std::move(cand));
        } else if (ranks_before(cand, heap.top())) {
            heap.pop();
            heap.push(std::move(cand));
        }
    }
    out.entries.reserve(heap.size());
    while (!heap.empty()) {
        out.entries.push_back(heap.top());
        heap.pop();
    }
    std::reverse(out.entries.begin(), out.entries.end());
    return out;
}

Run search_all(const InvertedIndex& index, const std::vector<corpus::Query>& queries, std::size_t k,
               const Bm25Params& params, unsigned threads)
{
    std::vector<RankedList> lists(queries.size());
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(queries.size())));
    auto work = [&](std::size_t begin, std::size_t step) {
        for (std::size_t i = begin; i < queries.size(); i += step) {
            lists[i] = search_topk(index, queries[i], k, params);
        }
    };
    if (threads <= 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back(work, t, threads);
        }
    }
    Run run;
    run.tag = "bm25";
    for (auto& l : lists) {
        run.lists[l.query_id] = std::move(l);
    }
    return run;
}

double coverage_at_k(const Run& run, const corpus::Qrels& qrels, std::size_t k)
{
    if (k == 0) {
        throw ConfigError("k must be at least 1");
    }
    double total = 0.0;
    std::size_t counted = 0;
    for (const auto& [qid, docs] : qrels.judgments) {
        auto relevant = qrels.relevant(qid);
        if (relevant.empty()) {
            continue;
        }
        const auto& list = run.at(qid);
        std::size_t found = 0;
        const std::size_t depth = std::min(k, list.size());
        for (std::size_t i = 0; i < depth; ++i) {
            if (qrels.grade(qid, list.entries[i].doc_id) > 0) {
                ++found;
            }
        }
        total += static_cast<double>(found) / static_cast<double>(relevant.size());
        ++counted;
    }
    if (counted == 0) {
        throw InvalidInput("coverage is undefined: no query has a relevant judgment");
    }
    return total / static_cast<double>(counted);
}

}  // namespace cmt::sparse
