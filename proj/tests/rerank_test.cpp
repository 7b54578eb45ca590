#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "cmt/error.hpp"
#include "cmt/fixtures.hpp"
#include "cmt/rerank.hpp"
#include "test_util.hpp"

using namespace cmt;
using namespace cmt::rerank;

namespace {

RankedList list_of(std::vector<std::pair<std::string, double>> entries, corpus::QueryId q = 1)
{
    RankedList l;
    l.query_id = q;
    for (auto& [id, s] : entries) {
        l.entries.push_back({id, s});
    }
    l.sort();
    return l;
}

RankedList random_list(Rng& rng, std::size_t n, std::size_t universe = 40)
{
    std::set<std::string> ids;
    while (ids.size() < n) {
        ids.insert("d" + std::to_string(rng.below(universe)));
    }
    RankedList l;
    l.query_id = 1;
    for (const auto& id : ids) {
        l.entries.push_back({id, rng.uniform(-5, 5)});
    }
    l.sort();
    return l;
}

Features random_features(Rng& rng)
{
    Features f{};
    for (auto& x : f) {
        x = rng.uniform(-2, 2);
    }
    f[kBias] = 1.0;
    return f;
}

/// Rescore everything, then keep the reranked head and the base-order tail.
std::vector<std::string> splice_oracle(const Ranker& ranker, const RankedList& base, std::size_t depth,
                                       const FeatureFn& features)
{
    std::vector<ScoredDoc> head;
    for (std::size_t i = 0; i < std::min(depth, base.size()); ++i) {
        head.push_back({base.entries[i].doc_id, ranker.score(features(base.entries[i].doc_id))});
    }
    std::sort(head.begin(), head.end(), ranks_before);
    std::vector<std::string> out;
    for (const auto& e : head) {
        out.push_back(e.doc_id);
    }
    for (std::size_t i = head.size(); i < base.size(); ++i) {
        out.push_back(base.entries[i].doc_id);
    }
    return out;
}

}  // namespace

TEST(Rerank, DepthOneKeepsOrderAndMembership)
{
    Rng rng(1);
    Ranker ranker;
    ranker.weights = {0.3, -1, 2, 0.5, 0.1, 0};
    std::map<std::string, Features> feats;
    auto base = random_list(rng, 20);
    for (const auto& e : base.entries) {
        feats[e.doc_id] = random_features(rng);
    }
    auto fn = [&](const std::string& id) { return feats.at(id); };
    auto out = rerank::rerank(ranker, base, 1, fn);
    EXPECT_EQ(out.doc_ids(), base.doc_ids());
    EXPECT_EQ(out.entries[0].score, ranker.score(feats.at(base.entries[0].doc_id)));
    EXPECT_TRUE(out.valid());
}

TEST(Rerank, FullDepthSortsByRankerScore)
{
    Rng rng(2);
    Ranker ranker;
    ranker.weights = {1, 0.5, -0.5, 0, 0, 0};
    std::map<std::string, Features> feats;
    auto base = random_list(rng, 15);
    std::vector<ScoredDoc> expected;
    for (const auto& e : base.entries) {
        feats[e.doc_id] = random_features(rng);
        expected.push_back({e.doc_id, ranker.score(feats[e.doc_id])});
    }
    std::sort(expected.begin(), expected.end(), ranks_before);
    auto out = rerank::rerank(ranker, base, 100, [&](const std::string& id) { return feats.at(id); });
    ASSERT_EQ(out.size(), expected.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        EXPECT_EQ(out.entries[i], expected[i]);
    }
}

TEST(Rerank, MatchesSpliceOracleAndKeepsMembershipAtEveryDepth)
{
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Ranker ranker;
        for (auto& w : ranker.weights) {
            w = rng.uniform(-1, 1);
        }
        std::map<std::string, Features> feats;
        auto base = random_list(rng, 1 + rng.below(30));
        for (const auto& e : base.entries) {
            feats[e.doc_id] = random_features(rng);
        }
        FeatureFn fn = [&](const std::string& id) { return feats.at(id); };
        for (std::size_t depth : {1u, 3u, 10u, 50u}) {
            auto out = rerank::rerank(ranker, base, depth, fn);
            EXPECT_EQ(out.doc_ids(), splice_oracle(ranker, base, depth, fn));
            EXPECT_TRUE(out.valid());
            auto a = out.doc_ids(), b = base.doc_ids();
            EXPECT_EQ(std::set<std::string>(a.begin(), a.end()), std::set<std::string>(b.begin(), b.end()));
            for (std::size_t i = std::min(depth, base.size()); i < out.size(); ++i) {
                EXPECT_LT(out.entries[i].score, out.entries[i - 1].score);
            }
        }
    }
    EXPECT_THROW(rerank::rerank(Ranker{}, RankedList{}, 0, [](const std::string&) { return Features{}; }), ConfigError);
}

TEST(Rerank, DepthFiftyAndHundredOnFixtureFollowTheOracle)
{
    auto fx = fixtures::topic_fixture();
    auto index = sparse::InvertedIndex::build(fx.docs);
    FeatureExtractor extractor(index);
    auto base = sparse::search_all(index, fx.queries, 200);
    Ranker ranker;
    ranker.weights = {0.2, 0, 3, 0.5, 0, 0};
    for (std::size_t depth : {50u, 100u}) {
        auto run = rerank_run(ranker, base, depth, extractor, fx.queries);
        for (const auto& q : fx.queries) {
            auto ctx = extractor.prepare(q.terms);
            FeatureFn fn = [&](const std::string& id) { return extractor.extract(ctx, id); };
            EXPECT_EQ(run.at(q.query_id).doc_ids(), splice_oracle(ranker, base.at(q.query_id), depth, fn));
        }
    }
    EXPECT_EQ(rerank_run(ranker, base, 50, extractor, fx.queries, 4).lists,
              rerank_run(ranker, base, 50, extractor, fx.queries, 1).lists);
}

TEST(Features, MatchHandValues)
{
    std::vector<corpus::Document> docs{cmt::testing::doc("a", "spike protein spike"),
                                       cmt::testing::doc("b", "protein folding"), cmt::testing::doc("c", "ace2")};
    auto index = sparse::InvertedIndex::build(docs);
    FeatureExtractor extractor(index);
    const std::vector<std::string> terms{"spike", "spike", "ace2"};
    auto f = extractor.extract(terms, "a");
    EXPECT_NEAR(f[kBm25], sparse::bm25_score(index, terms, 0), 1e-15);
    EXPECT_EQ(f[kDenseSimilarity], 0.0);
    EXPECT_NEAR(f[kTermOverlap], 0.5, 1e-15);
    EXPECT_NEAR(f[kMatchedIdf], index.idf("spike"), 1e-15);
    EXPECT_EQ(f[kQueryLength], 3.0);
    EXPECT_EQ(f[kBias], 1.0);
    auto unknown = extractor.extract(terms, "zzz");
    EXPECT_EQ(unknown[kBm25], 0.0);
    EXPECT_EQ(unknown[kBias], 1.0);
}

TEST(Features, DenseSimilarityUsesTheDenseIndex)
{
    std::vector<corpus::Document> docs{cmt::testing::doc("a", "spike protein"), cmt::testing::doc("b", "vaccine")};
    std::vector<std::string> texts{docs[0].text(), docs[1].text()};
    auto vocab = corpus::train_subword_vocab(texts, 30);
    dense::DenseEncoder enc(vocab.size(), 6, 3);
    auto dindex = dense::build_dense_index(enc, docs, vocab);
    auto index = sparse::InvertedIndex::build(docs);
    FeatureExtractor extractor(index, {}, &enc, &dindex, &vocab);
    const std::vector<std::string> terms{"spike"};
    const auto q = enc.encode(corpus::tokenize("spike", vocab));
    const auto d = enc.encode(corpus::tokenize(docs[1].text(), vocab));
    EXPECT_NEAR(extractor.extract(terms, "b")[kDenseSimilarity], q.dot(d), 1e-15);
    EXPECT_THROW(FeatureExtractor(index, {}, &enc, nullptr, &vocab), ConfigError);
}

TEST(Pairwise, ZeroRateLeavesWeights)
{
    Rng rng(4);
    Ranker r;
    r.weights = {1, 2, 3, 4, 5, 6};
    std::vector<FeaturePair> pairs{{random_features(rng), random_features(rng)}};
    pairwise_train_step(r, pairs, 0.0);
    EXPECT_EQ(r.weights, (Features{1, 2, 3, 4, 5, 6}));
}

TEST(Pairwise, ZeroWeightsGiveLn2)
{
    Rng rng(5);
    std::vector<FeaturePair> pairs{{random_features(rng), random_features(rng)}};
    EXPECT_NEAR(pairwise_loss_gradient(Ranker{}, pairs).loss, std::log(2.0), 1e-15);
    EXPECT_THROW(pairwise_loss_gradient(Ranker{}, std::vector<FeaturePair>{}), InvalidInput);
}

TEST(Pairwise, GradientMatchesCentralDifferences)
{
    Rng rng(6);
    const double eps = 1e-6;
    for (int probe = 0; probe < 20; ++probe) {
        Ranker r;
        for (auto& w : r.weights) {
            w = rng.uniform(-1, 1);
        }
        std::vector<FeaturePair> pairs;
        for (int i = 0; i < 5; ++i) {
            pairs.push_back({random_features(rng), random_features(rng)});
        }
        auto g = pairwise_loss_gradient(r, pairs);
        for (std::size_t i = 0; i < kFeatureCount; ++i) {
            Ranker plus = r, minus = r;
            plus.weights[i] += eps;
            minus.weights[i] -= eps;
            const double numeric =
                (pairwise_loss_gradient(plus, pairs).loss - pairwise_loss_gradient(minus, pairs).loss) / (2 * eps);
            EXPECT_LE(std::abs(numeric - g.gradient[i]),
                      1e-6 * std::max(std::abs(numeric), std::abs(g.gradient[i])) + 1e-9);
        }
    }
}

TEST(Pairwise, LossNonIncreasingAtSmallRateAndSeparableReachesFullAccuracy)
{
    Rng rng(7);
    std::vector<FeaturePair> pairs;
    for (int i = 0; i < 30; ++i) {
        auto p = random_features(rng);
        auto n = random_features(rng);
        p[kTermOverlap] = 1.0 + rng.uniform();
        n[kTermOverlap] = -1.0 - rng.uniform();
        pairs.push_back({p, n});
    }
    Ranker slow;
    double prev = pairwise_loss_gradient(slow, pairs).loss;
    for (int s = 0; s < 100; ++s) {
        pairwise_train_step(slow, pairs, 1e-3);
        const double now = pairwise_loss_gradient(slow, pairs).loss;
        EXPECT_LE(now, prev);
        prev = now;
    }
    Ranker fast;
    for (int s = 0; s < 200; ++s) {
        pairwise_train_step(fast, pairs, 0.5);
    }
    EXPECT_EQ(pairwise_accuracy(fast, pairs), 1.0);
}

TEST(RankerFile, RoundTrip)
{
    cmt::testing::TempDir dir;
    Ranker r;
    r.weights = {0.5, -0.25, 1e-9, 3, 0, -7};
    r.save(dir / "r.ckpt");
    EXPECT_EQ(Ranker::load(dir / "r.ckpt").weights, r.weights);
}

TEST(Fusion, MinMaxNormalization)
{
    auto n = min_max_normalize(list_of({{"a", 10}, {"b", 5}, {"c", 0}}));
    EXPECT_EQ(n["a"], 1.0);
    EXPECT_EQ(n["b"], 0.5);
    EXPECT_EQ(n["c"], 0.0);
    auto flat = min_max_normalize(list_of({{"a", 3}, {"b", 3}}));
    EXPECT_EQ(flat["a"], 0.5);
    EXPECT_EQ(flat["b"], 0.5);
}

TEST(Fusion, InterpolationHandExample)
{
    // Ranker normalised: a 1, b 0.5, c 0. Dense normalised: c 1, a 0.5, b 0.
    auto ranker = list_of({{"a", 4}, {"b", 3}, {"c", 2}});
    auto dense = list_of({{"c", 0.9}, {"a", 0.5}, {"b", 0.1}});
    auto fused = fuse_interpolate(ranker, dense, 0.5);
    ASSERT_EQ(fused.size(), 3u);
    EXPECT_EQ(fused.entries[0].doc_id, "a");
    EXPECT_NEAR(fused.entries[0].score, 0.75, 1e-15);
    EXPECT_EQ(fused.entries[1].doc_id, "c");
    EXPECT_NEAR(fused.entries[1].score, 0.5, 1e-15);
    EXPECT_EQ(fused.entries[2].doc_id, "b");
    EXPECT_NEAR(fused.entries[2].score, 0.25, 1e-15);
    // A doc absent from the dense list gets dense 0.
    auto partial = fuse_interpolate(ranker, list_of({{"a", 1}, {"b", 0}}), 1.0);
    EXPECT_EQ(partial.doc_ids(), (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_THROW(fuse_interpolate(ranker, dense, 1.5), ConfigError);
}

TEST(Fusion, AlphaEndpointsAndLinearity)
{
    Rng rng(8);
    for (int t = 0; t < 50; ++t) {
        auto ranker = random_list(rng, 15, 30);
        RankedList dense;
        dense.query_id = 1;
        for (const auto& e : ranker.entries) {
            dense.entries.push_back({e.doc_id, rng.uniform(-1, 1)});
        }
        dense.sort();
        auto rn = min_max_normalize(ranker);
        auto dn = min_max_normalize(dense);
        EXPECT_EQ(fuse_interpolate(ranker, dense, 0.0).doc_ids(), ranker.doc_ids());
        EXPECT_EQ(fuse_interpolate(ranker, dense, 1.0).doc_ids(), dense.doc_ids());
        for (double alpha : {0.0, 0.3, 1.0}) {
            for (const auto& e : fuse_interpolate(ranker, dense, alpha).entries) {
                EXPECT_NEAR(e.score, alpha * dn[e.doc_id] + (1 - alpha) * rn[e.doc_id], 1e-15);
            }
        }
    }
}

TEST(Fusion, RrfHandExampleAndSingleList)
{
    auto a = list_of({{"x", 3}, {"y", 2}});
    auto b = list_of({{"x", 9}, {"z", 1}});
    const RankedList both[] = {a, b};
    auto fused = reciprocal_rank_fusion(both, 10, 60);
    ASSERT_EQ(fused.size(), 3u);
    EXPECT_EQ(fused.entries[0].doc_id, "x");
    EXPECT_NEAR(fused.entries[0].score, 2.0 / 61.0, 1e-12);
    // y and z each appear once at rank 2.
    EXPECT_NEAR(fused.entries[1].score, 1.0 / 62.0, 1e-15);
    EXPECT_EQ(fused.entries[1].doc_id, "y");
    const RankedList one[] = {a};
    EXPECT_EQ(reciprocal_rank_fusion(one, 10).doc_ids(), a.doc_ids());
    EXPECT_EQ(fuse_base_union(a, b, 2).size(), 2u);
    EXPECT_THROW(reciprocal_rank_fusion(both, 0), ConfigError);
    EXPECT_THROW(reciprocal_rank_fusion(both, 5, 0), ConfigError);
}

TEST(Fusion, RrfIgnoresMonotoneScoreTransforms)
{
    Rng rng(9);
    for (int t = 0; t < 50; ++t) {
        auto a = random_list(rng, 20);
        auto b = random_list(rng, 20);
        auto transform = [&](RankedList l) {
            const double scale = rng.uniform(0.1, 10), shift = rng.uniform(-100, 100);
            for (auto& e : l.entries) {
                e.score = scale * e.score + shift;
            }
            return l;
        };
        auto cube = [](RankedList l) {
            for (auto& e : l.entries) {
                e.score = e.score * e.score * e.score;
            }
            return l;
        };
        const RankedList plain[] = {a, b};
        const RankedList affine[] = {transform(a), transform(b)};
        const RankedList cubed[] = {cube(a), cube(b)};
        auto base = reciprocal_rank_fusion(plain, 30);
        EXPECT_EQ(reciprocal_rank_fusion(affine, 30).entries, base.entries);
        EXPECT_EQ(reciprocal_rank_fusion(cubed, 30).entries, base.entries);
    }
}

TEST(FusionConfigTest, ParseAndValidate)
{
    EXPECT_EQ(FusionConfig::parse_strategy("interp"), FusionStrategy::Interpolate);
    EXPECT_EQ(FusionConfig::parse_strategy("union"), FusionStrategy::BaseUnion);
    EXPECT_EQ(FusionConfig::parse_strategy("rrf"), FusionStrategy::Rrf);
    EXPECT_EQ(FusionConfig::parse_strategy("none"), FusionStrategy::None);
    EXPECT_THROW(FusionConfig::parse_strategy("sum"), ConfigError);
    EXPECT_THROW((FusionConfig{FusionStrategy::Rrf, -0.1, 60}.validate()), ConfigError);
    EXPECT_THROW((FusionConfig{FusionStrategy::Rrf, 0.5, 0}.validate()), ConfigError);
}

TEST(DepthSweep, RowsMatchIndependentRuns)
{
    auto fx = fixtures::topic_fixture();
    auto index = sparse::InvertedIndex::build(fx.docs);
    FeatureExtractor extractor(index);
    auto base = sparse::search_all(index, fx.queries, 100);
    Ranker ranker;
    ranker.weights = {0.1, 0, 2, 0.3, 0, 0};
    const std::vector<std::size_t> depths{20, 50, 100};
    auto rows = depth_sweep(ranker, base, depths, extractor, fx.queries, fx.qrels);
    ASSERT_EQ(rows.size(), 3u);
    for (std::size_t i = 0; i < depths.size(); ++i) {
        auto report = eval::evaluate(rerank_run(ranker, base, depths[i], extractor, fx.queries), fx.qrels);
        EXPECT_EQ(rows[i].depth, depths[i]);
        EXPECT_EQ(rows[i].ndcg10, report.overall->ndcg);
        EXPECT_EQ(rows[i].p5, report.overall->p5);
    }
    EXPECT_THROW(depth_sweep(ranker, base, std::vector<std::size_t>{}, extractor, fx.queries, fx.qrels), ConfigError);
}
