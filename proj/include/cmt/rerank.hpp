#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmt/dense.hpp"
#include "cmt/eval.hpp"
#include "cmt/ranked_list.hpp"
#include "cmt/sparse.hpp"

namespace cmt::rerank {

inline constexpr std::size_t kFeatureCount = 6;
using Features = std::array<double, kFeatureCount>;

/// Feature slots. New features go before kBias and bump kFeatureCount; the
/// checkpoint header records the count so old files are rejected.
enum Feature : std::size_t {
    kBm25 = 0,
    kDenseSimilarity = 1,
    kTermOverlap = 2,
    kMatchedIdf = 3,
    kQueryLength = 4,
    kBias = 5,
};

inline constexpr std::size_t kDefaultDepth = 100;

/// Query-side values reused across every candidate of one query.
struct QueryContext {
    std::vector<std::string> terms;
    std::vector<std::string> unique_terms;
    std::vector<double> unique_idf;
    std::optional<dense::Vector> query_vector;
};

/// Computes query-document features from the sparse index and, when given,
/// a dense encoder plus the dense index built with it.
class FeatureExtractor {
  public:
    FeatureExtractor(const sparse::InvertedIndex& index, sparse::Bm25Params params = {},
                     const dense::DenseEncoder* encoder = nullptr, const dense::DenseIndex* dense_index = nullptr,
                     const corpus::SubwordVocab* vocab = nullptr);

    QueryContext prepare(std::span<const std::string> terms) const;
    Features extract(const QueryContext& query, const std::string& doc_id) const;
    Features extract(std::span<const std::string> terms, const std::string& doc_id) const
    {
        return extract(prepare(terms), doc_id);
    }

    const sparse::InvertedIndex& index() const { return index_; }
    bool has_dense() const { return encoder_ != nullptr; }

  private:
    const sparse::InvertedIndex& index_;
    sparse::Bm25Params params_;
    const dense::DenseEncoder* encoder_;
    const dense::DenseIndex* dense_index_;
    const corpus::SubwordVocab* vocab_;
    std::vector<std::int64_t> dense_rows_;
};

/// Linear scorer over the fixed feature vector.
struct Ranker {
    Features weights{};

    double score(const Features& f) const;

    /// Ranks by BM25 alone.
    static Ranker bm25_only();

    void save(const std::filesystem::path& path) const;
    static Ranker load(const std::filesystem::path& path);
};

using FeatureFn = std::function<Features(const std::string& doc_id)>;

/// Rescores the top `depth` candidates and sorts them by ranker score. The
/// rest keep base order below the reranked block, with scores
/// min(block) - 1, min(block) - 2, ...
RankedList rerank(const Ranker& ranker, const RankedList& candidates, std::size_t depth, const FeatureFn& features);

RankedList rerank(const Ranker& ranker, const RankedList& candidates, std::size_t depth,
                  const FeatureExtractor& extractor, std::span<const std::string> query_terms);

/// Reranks every query of `base`; the result does not depend on `threads`.
Run rerank_run(const Ranker& ranker, const Run& base, std::size_t depth, const FeatureExtractor& extractor,
               const std::vector<corpus::Query>& queries, unsigned threads = 1);

struct FeaturePair {
    Features positive{};
    Features negative{};
};

struct PairwiseLoss {
    double loss = 0.0;
    Features gradient{};
};

/// Mean of ln(1 + e^{-(s+ - s-)}) and its gradient w.r.t. the weights.
PairwiseLoss pairwise_loss_gradient(const Ranker& ranker, std::span<const FeaturePair> pairs);

/// One descent step; returns the mean loss before the step.
double pairwise_train_step(Ranker& ranker, std::span<const FeaturePair> pairs, double learning_rate);

/// Fraction of pairs with s+ > s-.
double pairwise_accuracy(const Ranker& ranker, std::span<const FeaturePair> pairs);

enum class FusionStrategy { None, Interpolate, BaseUnion, Rrf };

struct FusionConfig {
    FusionStrategy strategy = FusionStrategy::None;
    double alpha = 0.5;
    int rrf_k = 60;

    void validate() const;
    /// "none", "interp", "union" or "rrf".
    static FusionStrategy parse_strategy(const std::string& name);
};

/// Per-query min-max normalisation to [0, 1]; every doc gets 0.5 when all
/// scores are equal.
std::map<std::string, double> min_max_normalize(const RankedList& list);

/// alpha * dense + (1 - alpha) * ranker over the ranker list's docs, both
/// min-max normalised. Docs missing from `dense_scores` get dense 0.
RankedList fuse_interpolate(const RankedList& ranker_scores, const RankedList& dense_scores, double alpha);

/// score(d) = sum over lists of 1 / (rrf_k + rank_d); top k returned.
RankedList reciprocal_rank_fusion(std::span<const RankedList> lists, std::size_t k, int rrf_k = 60);

/// RRF of the BM25 and dense base lists.
RankedList fuse_base_union(const RankedList& bm25, const RankedList& dense, std::size_t k, int rrf_k = 60);

struct DepthRow {
    std::size_t depth = 0;
    double ndcg10 = 0.0;
    double p5 = 0.0;
};

/// Reranks `base` at each depth and evaluates against `qrels`.
std::vector<DepthRow> depth_sweep(const Ranker& ranker, const Run& base, std::span<const std::size_t> depths,
                                  const FeatureExtractor& extractor, const std::vector<corpus::Query>& queries,
                                  const corpus::Qrels& qrels);

}  // namespace cmt::rerank
