#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cmt/corpus.hpp"
#include "cmt/random.hpp"
#include "cmt/rerank.hpp"
#include "cmt/sparse.hpp"

namespace cmt::weaksup {

inline constexpr std::size_t kDefaultMaxQueryTerms = 6;
inline constexpr std::size_t kDefaultRetrievalDepth = 20;

inline constexpr std::string_view kSourcePipeline = "qg-pipeline";
inline constexpr std::string_view kSourceStage1 = "qg-stage1";
inline constexpr std::string_view kSourceExternal = "external";

/// Single-document and contrastive-pair query generation.
class QueryGenerator {
  public:
    virtual ~QueryGenerator() = default;
    /// q = QG(d)
    virtual std::string generate(const corpus::Document& doc) const = 0;
    /// q' = ContrastQG(d+, d-)
    virtual std::string contrast_generate(const corpus::Document& positive, const corpus::Document& negative) const = 0;
};

struct TermScore {
    std::string term;
    double score = 0.0;
};

/// Picks the most salient content terms by tf-idf against the indexed corpus,
/// tfidf(t, d) = tf(t, d) * ln(1 + N / max(df(t), 1)). Terms are emitted in
/// order of first occurrence in the source document; score ties go to the
/// lexicographically smaller term.
class SalienceQueryGenerator : public QueryGenerator {
  public:
    SalienceQueryGenerator(const sparse::InvertedIndex& index, const corpus::StopwordSet& stopwords,
                           std::size_t max_terms = kDefaultMaxQueryTerms);

    /// tf-idf of every content (non-stopword) term, in first-occurrence order.
    std::vector<TermScore> salience(const corpus::Document& doc) const;
    /// tfidf(t, d+) - tfidf(t, d-) for every content term of d+.
    std::vector<TermScore> contrastive_salience(const corpus::Document& positive,
                                                const corpus::Document& negative) const;

    /// Throws GenerationError when the document has no content term.
    std::string generate(const corpus::Document& doc) const override;
    /// Only terms with positive contrastive salience qualify. Throws
    /// GenerationError for the same doc twice or when no term qualifies.
    std::string contrast_generate(const corpus::Document& positive,
                                  const corpus::Document& negative) const override;

    std::size_t max_terms() const { return max_terms_; }

  private:
    std::string pick(const std::vector<TermScore>& scored, bool require_positive) const;

    const sparse::InvertedIndex& index_;
    const corpus::StopwordSet& stopwords_;
    std::size_t max_terms_;
};

struct WeakTriple {
    std::string query;
    std::string pos_doc_id;
    std::string neg_doc_id;
    std::string source{kSourcePipeline};

    /// Throws InvalidInput for an empty query or pos == neg.
    void validate() const;
    bool operator==(const WeakTriple&) const = default;
};

/// Line-delimited {"query","pos_doc_id","neg_doc_id","source"} records.
std::vector<WeakTriple> read_triples(const std::filesystem::path& path);
void write_triples(const std::filesystem::path& path, std::span<const WeakTriple> triples);

struct SynthesisOptions {
    std::size_t count = 100;
    std::size_t retrieval_depth = kDefaultRetrievalDepth;
    std::uint64_t seed = 0;
    /// Attempts allowed per requested triple before giving up.
    std::size_t max_attempts_per_triple = 20;
    /// Also emit (q, d+, d-) with the stage-1 query.
    bool include_stage1 = false;
};

struct SynthesisResult {
    std::vector<WeakTriple> triples;
    /// Stage-1 query that retrieved each triple's pair, parallel to `triples`.
    std::vector<std::string> stage1_queries;
    /// Fewer than `count` pipeline triples could be assembled.
    bool partial = false;
};

/// Seed doc -> q = QG(d) -> BM25 top R -> d+ from ranks 1..R/2 and d- from
/// ranks R/2+1..R -> q' = ContrastQG(d+, d-). Degenerate pairs are retried.
SynthesisResult synthesize_triples(const std::vector<corpus::Document>& docs, const sparse::InvertedIndex& index,
                                   const QueryGenerator& generator, const corpus::StopwordSet& stopwords,
                                   const SynthesisOptions& options);

inline constexpr std::size_t kPolicyFeatureCount = 6;
using PolicyFeatures = std::array<double, kPolicyFeatureCount>;

/// [BM25(q', d+), BM25(q', d-), their difference, dense similarity difference,
///  query length, 1].
PolicyFeatures instance_features(const WeakTriple& triple, const rerank::FeatureExtractor& extractor,
                                 const corpus::StopwordSet& stopwords);

/// Bernoulli selection policy p(select | x) = logistic(w . x) with a running
/// mean reward baseline.
struct SelectorPolicy {
    PolicyFeatures weights{};
    double baseline = 0.0;
    std::size_t updates = 0;
    double learning_rate = 0.05;

    double probability(const PolicyFeatures& x) const;
    double logit(const PolicyFeatures& x) const;

    void save(const std::filesystem::path& path) const;
    static SelectorPolicy load(const std::filesystem::path& path);
};

/// A weak triple with everything the selector and ranker need precomputed.
struct SelectionInstance {
    WeakTriple triple;
    PolicyFeatures policy_features{};
    rerank::FeaturePair ranker_pair;
};

std::vector<SelectionInstance> prepare_instances(std::span<const WeakTriple> triples,
                                                 const rerank::FeatureExtractor& extractor,
                                                 const corpus::StopwordSet& stopwords);

/// Dev queries with their candidate features frozen, so a ranker can be
/// scored by NDCG@k without touching the indexes again.
class TargetSet {
  public:
    TargetSet(const rerank::FeatureExtractor& extractor, const std::vector<corpus::Query>& queries,
              const corpus::Qrels& qrels, const Run& base, std::size_t depth);

    Run rank(const rerank::Ranker& ranker) const;
    double ndcg(const rerank::Ranker& ranker, std::size_t k = 10) const;
    const corpus::Qrels& qrels() const { return qrels_; }

  private:
    struct Candidates {
        RankedList base;
        std::unordered_map<std::string, rerank::Features> features;
    };
    std::vector<Candidates> queries_;
    corpus::Qrels qrels_;
    std::size_t depth_;
};

struct SelectOptions {
    double ranker_learning_rate = 0.05;
    /// Keep the trial ranker even when the reward is negative.
    bool keep_all_updates = false;
};

struct StepResult {
    double reward = 0.0;
    double ndcg_before = 0.0;
    double ndcg_after = 0.0;
    std::size_t selected = 0;
    bool ranker_updated = false;
};

/// Sample a selection, train a ranker clone on it, reward the NDCG@10 change
/// on the target set, apply REINFORCE, keep the clone iff reward >= 0.
StepResult reinfoselect_step(SelectorPolicy& policy, std::span<const SelectionInstance> batch,
                             rerank::Ranker& ranker, const TargetSet& target, Rng& rng,
                             const SelectOptions& options = {});

/// REINFORCE update alone: w += lr * (reward - baseline) * sum_i (a_i - p_i) x_i,
/// then the baseline absorbs `reward`.
void reinforce_update(SelectorPolicy& policy, std::span<const SelectionInstance> batch,
                      const std::vector<bool>& actions, double reward);

struct SelectionRunOptions {
    std::size_t steps = 300;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    SelectOptions step;
    /// Force every instance selected and keep every update (the all-data baseline).
    bool select_all = false;
    /// Record the target NDCG@10 after every this many steps; 0 disables.
    std::size_t eval_every = 3;
};

struct SelectionHistory {
    std::vector<StepResult> steps;
    /// (step count, target NDCG@10) at each periodic check.
    std::vector<std::pair<std::size_t, double>> checks;
};

SelectionHistory run_selection(SelectorPolicy& policy, std::span<const SelectionInstance> instances,
                               rerank::Ranker& ranker, const TargetSet& target, const SelectionRunOptions& options);

}  // namespace cmt::weaksup
