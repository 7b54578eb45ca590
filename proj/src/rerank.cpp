#include "cmt/rerank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>
#include <unordered_map>

#include "cmt/binary_io.hpp"
#include "cmt/error.hpp"

namespace cmt::rerank {

namespace {

constexpr std::string_view kRankerMagic = "CMTRANKR";
constexpr std::uint32_t kRankerVersion = 1;

double dot(const Features& a, const Features& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        s += a[i] * b[i];
    }
    return s;
}

/// ln(1 + e^{x}) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

FeatureExtractor::FeatureExtractor(const sparse::InvertedIndex& index, sparse::Bm25Params params,
                                   const dense::DenseEncoder* encoder, const dense::DenseIndex* dense_index,
                                   const corpus::SubwordVocab* vocab)
    : index_(index), params_(params), encoder_(encoder), dense_index_(dense_index), vocab_(vocab)
{
    if (encoder_ && (!dense_index_ || !vocab_)) {
        throw ConfigError("dense features need the encoder, its dense index and the subword vocab");
    }
    if (dense_index_) {
        if (static_cast<std::size_t>(dense_index_->vectors.cols()) != encoder_->dim()) {
            throw InvalidInput("dense index dimension does not match the encoder");
        }
        dense_rows_.assign(index_.doc_count(), -1);
        for (std::size_t row = 0; row < dense_index_->doc_count(); ++row) {
            if (auto ord = index_.ordinal(dense_index_->doc_ids[row])) {
                dense_rows_[*ord] = static_cast<std::int64_t>(row);
            }
        }
    }
}

QueryContext FeatureExtractor::prepare(std::span<const std::string> terms) const
{
    QueryContext q;
    q.terms.assign(terms.begin(), terms.end());
    std::set<std::string> seen;
    for (const auto& t : terms) {
        if (seen.insert(t).second) {
            q.unique_terms.push_back(t);
            q.unique_idf.push_back(index_.idf(t));
        }
    }
    if (encoder_) {
        std::string text;
        for (const auto& t : terms) {
            text += t;
            text += ' ';
        }
        q.query_vector = encoder_->encode(corpus::tokenize(text, *vocab_));
    }
    return q;
}

Features FeatureExtractor::extract(const QueryContext& query, const std::string& doc_id) const
{
    Features f{};
    f[kQueryLength] = static_cast<double>(query.terms.size());
    f[kBias] = 1.0;
    auto ord = index_.ordinal(doc_id);
    if (!ord) {
        return f;
    }
    f[kBm25] = sparse::bm25_score(index_, query.terms, *ord, params_);
    std::size_t matched = 0;
    for (std::size_t i = 0; i < query.unique_terms.size(); ++i) {
        if (index_.tf(query.unique_terms[i], *ord) > 0) {
            ++matched;
            f[kMatchedIdf] += query.unique_idf[i];
        }
    }
    if (!query.unique_terms.empty()) {
        f[kTermOverlap] = static_cast<double>(matched) / static_cast<double>(query.unique_terms.size());
    }
    if (query.query_vector && dense_rows_[*ord] >= 0) {
        const dense::Vector row = dense_index_->vectors.row(dense_rows_[*ord]).transpose();
        f[kDenseSimilarity] = dense::similarity(*query.query_vector, row);
    }
    return f;
}

double Ranker::score(const Features& f) const { return dot(weights, f); }

Ranker Ranker::bm25_only()
{
    Ranker r;
    r.weights[kBm25] = 1.0;
    return r;
}

void Ranker::save(const std::filesystem::path& path) const
{
    io::BinaryWriter out(path);
    out.magic(kRankerMagic);
    out.put(kRankerVersion);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(kFeatureCount));
    out.put_array(weights.data(), weights.size());
    out.finish();
}

Ranker Ranker::load(const std::filesystem::path& path)
{
    io::BinaryReader in(path);
    in.expect_magic(kRankerMagic);
    if (in.get<std::uint32_t>() != kRankerVersion) {
        throw ParseError(path.string() + ": unsupported ranker version");
    }
    if (in.get<std::uint32_t>() != kFeatureCount) {
        throw ParseError(path.string() + ": ranker feature count mismatch");
    }
    Ranker r;
    in.get_array(r.weights.data(), r.weights.size());
    return r;
}

RankedList rerank(const Ranker& ranker, const RankedList& candidates, std::size_t depth, const FeatureFn& features)
{
    if (depth == 0) {
        throw ConfigError("rerank depth must be at least 1");
    }
    RankedList out;
    out.query_id = candidates.query_id;
    const std::size_t head = std::min(depth, candidates.size());
    out.entries.reserve(candidates.size());
    for (std::size_t i = 0; i < head; ++i) {
        const auto& id = candidates.entries[i].doc_id;
        out.entries.push_back({id, ranker.score(features(id))});
    }
    std::sort(out.entries.begin(), out.entries.end(), ranks_before);
    double floor = out.entries.empty() ? 0.0 : out.entries.back().score;
    for (std::size_t i = head; i < candidates.size(); ++i) {
        floor -= 1.0;
        out.entries.push_back({candidates.entries[i].doc_id, floor});
    }
    return out;
}

RankedList rerank(const Ranker& ranker, const RankedList& candidates, std::size_t depth,
                  const FeatureExtractor& extractor, std::span<const std::string> query_terms)
{
    auto ctx = extractor.prepare(query_terms);
    return rerank(ranker, candidates, depth, [&](const std::string& id) { return extractor.extract(ctx, id); });
}

Run rerank_run(const Ranker& ranker, const Run& base, std::size_t depth, const FeatureExtractor& extractor,
               const std::vector<corpus::Query>& queries, unsigned threads)
{
    std::vector<const corpus::Query*> todo;
    for (const auto& q : queries) {
        if (base.lists.contains(q.query_id)) {
            todo.push_back(&q);
        }
    }
    std::vector<RankedList> lists(todo.size());
    auto work = [&](std::size_t begin, std::size_t step) {
        for (std::size_t i = begin; i < todo.size(); i += step) {
            lists[i] = rerank(ranker, base.at(todo[i]->query_id), depth, extractor, todo[i]->terms);
        }
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(todo.size())));
    if (threads == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back(work, t, threads);
        }
    }
    Run out;
    out.tag = base.tag;
    for (auto& l : lists) {
        out.lists[l.query_id] = std::move(l);
    }
    return out;
}

PairwiseLoss pairwise_loss_gradient(const Ranker& ranker, std::span<const FeaturePair> pairs)
{
    if (pairs.empty()) {
        throw InvalidInput("pairwise training needs at least one pair");
    }
    PairwiseLoss out;
    for (const auto& p : pairs) {
        const double margin = ranker.score(p.positive) - ranker.score(p.negative);
        out.loss += softplus(-margin);
        const double coeff = -sigmoid(-margin);
        for (std::size_t i = 0; i < kFeatureCount; ++i) {
            out.gradient[i] += coeff * (p.positive[i] - p.negative[i]);
        }
    }
    const double n = static_cast<double>(pairs.size());
    out.loss /= n;
    for (auto& g : out.gradient) {
        g /= n;
    }
    return out;
}

double pairwise_train_step(Ranker& ranker, std::span<const FeaturePair> pairs, double learning_rate)
{
    auto lg = pairwise_loss_gradient(ranker, pairs);
    if (!std::isfinite(lg.loss)) {
        throw NumericError("non-finite pairwise loss");
    }
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        if (!std::isfinite(lg.gradient[i])) {
            throw NumericError("non-finite pairwise gradient");
        }
        ranker.weights[i] -= learning_rate * lg.gradient[i];
    }
    return lg.loss;
}

double pairwise_accuracy(const Ranker& ranker, std::span<const FeaturePair> pairs)
{
    if (pairs.empty()) {
        return 0.0;
    }
    std::size_t correct = 0;
    for (const auto& p : pairs) {
        if (ranker.score(p.positive) > ranker.score(p.negative)) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

void FusionConfig::validate() const
{
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ConfigError("fusion alpha must lie in [0, 1]");
    }
    if (rrf_k < 1) {
        throw ConfigError("rrf_k must be at least 1");
    }
}

FusionStrategy FusionConfig::parse_strategy(const std::string& name)
{
    if (name == "none") return FusionStrategy::None;
    if (name == "interp") return FusionStrategy::Interpolate;
    if (name == "union") return FusionStrategy::BaseUnion;
    if (name == "rrf") return FusionStrategy::Rrf;
    throw ConfigError("unknown fusion strategy \"" + name + "\" (expected none, interp, union or rrf)");
}

std::map<std::string, double> min_max_normalize(const RankedList& list)
{
    std::map<std::string, double> out;
    if (list.empty()) {
        return out;
    }
    double lo = list.entries.front().score;
    double hi = lo;
    for (const auto& e : list.entries) {
        lo = std::min(lo, e.score);
        hi = std::max(hi, e.score);
    }
    for (const auto& e : list.entries) {
        out[e.doc_id] = hi > lo ? (e.score - lo) / (hi - lo) : 0.5;
    }
    return out;
}

RankedList fuse_interpolate(const RankedList& ranker_scores, const RankedList& dense_scores, double alpha)
{
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ConfigError("fusion alpha must lie in [0, 1]");
    }
    auto ranker_norm = min_max_normalize(ranker_scores);
    auto dense_norm = min_max_normalize(dense_scores);
    RankedList out;
    out.query_id = ranker_scores.query_id;
    for (const auto& e : ranker_scores.entries) {
        auto it = dense_norm.find(e.doc_id);
        const double d = it == dense_norm.end() ? 0.0 : it->second;
        out.entries.push_back({e.doc_id, alpha * d + (1.0 - alpha) * ranker_norm[e.doc_id]});
    }
    out.sort();
    return out;
}

RankedList reciprocal_rank_fusion(std::span<const RankedList> lists, std::size_t k, int rrf_k)
{
    if (k == 0) {
        throw ConfigError("k must be at least 1");
    }
    if (rrf_k < 1) {
        throw ConfigError("rrf_k must be at least 1");
    }
    std::unordered_map<std::string, double> scores;
    RankedList out;
    for (const auto& list : lists) {
        out.query_id = list.query_id;
        for (std::size_t r = 0; r < list.size(); ++r) {
            scores[list.entries[r].doc_id] += 1.0 / static_cast<double>(rrf_k + static_cast<int>(r) + 1);
        }
    }
    for (auto& [id, s] : scores) {
        out.entries.push_back({id, s});
    }
    out.sort();
    if (out.entries.size() > k) {
        out.entries.resize(k);
    }
    return out;
}

RankedList fuse_base_union(const RankedList& bm25, const RankedList& dense, std::size_t k, int rrf_k)
{
    const RankedList lists[] = {bm25, dense};
    auto out = reciprocal_rank_fusion(lists, k, rrf_k);
    out.query_id = bm25.query_id;
    return out;
}

std::vector<DepthRow> depth_sweep(const Ranker& ranker, const Run& base, std::span<const std::size_t> depths,
                                  const FeatureExtractor& extractor, const std::vector<corpus::Query>& queries,
                                  const corpus::Qrels& qrels)
{
    if (depths.empty()) {
        throw ConfigError("depth sweep needs at least one depth");
    }
    std::vector<DepthRow> rows;
    for (auto depth : depths) {
        auto run = rerank_run(ranker, base, depth, extractor, queries);
        eval::ReportOptions opts;
        opts.k = 10;
        auto report = eval::evaluate(run, qrels, opts);
        DepthRow row{depth, 0.0, 0.0};
        if (report.overall) {
            row.ndcg10 = report.overall->ndcg;
            row.p5 = report.overall->p5;
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace cmt::rerank
