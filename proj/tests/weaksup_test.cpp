#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "cmt/error.hpp"
#include "cmt/eval.hpp"
#include "cmt/fixtures.hpp"
#include "cmt/weaksup.hpp"
#include "test_util.hpp"

using namespace cmt;
using namespace cmt::weaksup;
using cmt::testing::doc;

namespace {

const corpus::StopwordSet& stop() { return corpus::default_stopwords(); }

std::size_t rank_of(const RankedList& list, const std::string& id)
{
    for (std::size_t i = 0; i < list.size(); ++i) {
        if (list.entries[i].doc_id == id) {
            return i;
        }
    }
    return list.size();
}

/// Small topic corpus with its BM25 index, extractor and target set.
struct SelectionWorld {
    fixtures::TopicFixture fx;
    sparse::InvertedIndex index;
    rerank::FeatureExtractor extractor;
    cmt::Run base;
    TargetSet target;

    explicit SelectionWorld(const fixtures::TopicFixtureOptions& opts)
        : fx(fixtures::topic_fixture(opts)), index(sparse::InvertedIndex::build(fx.docs)), extractor(index),
          base(sparse::search_all(index, fx.queries, 100)), target(extractor, fx.queries, fx.full_qrels, base, 100)
    {}
};

fixtures::TopicFixtureOptions small_topics()
{
    fixtures::TopicFixtureOptions o;
    o.topics = 3;
    o.docs_per_topic = 6;
    o.queries_per_topic = 1;
    o.new_queries = 0;
    return o;
}

}  // namespace

TEST(QueryGeneration, SingleContentTermIsTheQuery)
{
    std::vector<corpus::Document> docs{doc("a", "The coronavirus"), doc("b", "other words here")};
    auto index = sparse::InvertedIndex::build(docs);
    SalienceQueryGenerator qg(index, stop());
    EXPECT_EQ(qg.generate(docs[0]), "coronavirus");
}

TEST(QueryGeneration, TopTermsByTfidfInDocumentOrder)
{
    std::vector<corpus::Document> docs{doc("d0", "Remdesivir trial in patients"), doc("d1", "trial of patients care"),
                                       doc("d2", "patients at home"), doc("d3", "patients recover")};
    auto index = sparse::InvertedIndex::build(docs);
    SalienceQueryGenerator qg(index, stop(), 2);
    auto s = qg.salience(docs[0]);
    ASSERT_EQ(s.size(), 3u);
    // N = 4: df(remdesivir) = 1, df(trial) = 2, df(patients) = 4.
    EXPECT_EQ(s[0].term, "remdesivir");
    EXPECT_NEAR(s[0].score, std::log(5.0), 1e-12);
    EXPECT_NEAR(s[1].score, std::log(3.0), 1e-12);
    EXPECT_NEAR(s[2].score, std::log(2.0), 1e-12);
    EXPECT_EQ(qg.generate(docs[0]), "remdesivir trial");
    EXPECT_EQ(SalienceQueryGenerator(index, stop(), 6).generate(docs[0]), "remdesivir trial patients");
}

TEST(QueryGeneration, TermFrequencyMultipliesSalience)
{
    std::vector<corpus::Document> docs{doc("a", "virus virus virus host"), doc("b", "host cell")};
    auto index = sparse::InvertedIndex::build(docs);
    SalienceQueryGenerator qg(index, stop());
    auto s = qg.salience(docs[0]);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_NEAR(s[0].score, 3 * std::log(3.0), 1e-12);
    EXPECT_NEAR(s[1].score, std::log(2.0), 1e-12);
}

TEST(QueryGeneration, StopwordOnlyDocumentIsAnError)
{
    std::vector<corpus::Document> docs{doc("a", "the and of it"), doc("b", "virus")};
    auto index = sparse::InvertedIndex::build(docs);
    SalienceQueryGenerator qg(index, stop());
    EXPECT_THROW(qg.generate(docs[0]), GenerationError);
    EXPECT_THROW(SalienceQueryGenerator(index, stop(), 0), ConfigError);
}

TEST(QueryGeneration, ContrastKeepsOnlyPositiveSalience)
{
    std::vector<corpus::Document> docs{doc("p", "vaccine antibody"), doc("n", "vaccine distribution"),
                                       doc("x", "hospital beds"), doc("y", "vaccine hesitancy")};
    auto index = sparse::InvertedIndex::build(docs);
    SalienceQueryGenerator qg(index, stop());
    auto s = qg.contrastive_salience(docs[0], docs[1]);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].term, "vaccine");
    EXPECT_EQ(s[0].score, 0.0);
    EXPECT_NEAR(s[1].score, std::log(5.0), 1e-12);
    EXPECT_EQ(qg.contrast_generate(docs[0], docs[1]), "antibody");
    // Swapping the arguments draws from the other document's exclusive terms.
    EXPECT_EQ(qg.contrast_generate(docs[1], docs[0]), "distribution");
}

TEST(QueryGeneration, DegeneratePairsAreRejected)
{
    std::vector<corpus::Document> docs{doc("a", "spike protein"), doc("b", "spike protein"), doc("c", "ace2")};
    auto index = sparse::InvertedIndex::build(docs);
    SalienceQueryGenerator qg(index, stop());
    EXPECT_THROW(qg.contrast_generate(docs[0], docs[0]), GenerationError);
    EXPECT_THROW(qg.contrast_generate(docs[0], docs[1]), GenerationError);
}

TEST(QueryGeneration, ContrastNeverEmitsNonPositiveTerms)
{
    Rng rng(3);
    auto docs = cmt::testing::random_corpus(rng, 40, 15);
    auto index = sparse::InvertedIndex::build(docs);
    SalienceQueryGenerator qg(index, stop());
    for (int t = 0; t < 200; ++t) {
        const auto& p = docs[rng.below(docs.size())];
        const auto& n = docs[rng.below(docs.size())];
        std::string q;
        try {
            q = qg.contrast_generate(p, n);
        } catch (const GenerationError&) {
            continue;
        }
        auto scores = qg.contrastive_salience(p, n);
        auto terms = corpus::analyze(q);
        EXPECT_LE(terms.size(), qg.max_terms());
        for (const auto& term : terms) {
            auto it = std::find_if(scores.begin(), scores.end(), [&](const TermScore& s) { return s.term == term; });
            ASSERT_NE(it, scores.end());
            EXPECT_GT(it->score, 0.0);
        }
    }
}

TEST(Synthesis, TwoDocumentCorpusGivesOneDistinctPair)
{
    std::vector<corpus::Document> docs{doc("a", "coronavirus spike protein"), doc("b", "coronavirus vaccine trial")};
    auto index = sparse::InvertedIndex::build(docs);
    SalienceQueryGenerator qg(index, stop());
    SynthesisOptions opts;
    opts.count = 1;
    auto r = synthesize_triples(docs, index, qg, stop(), opts);
    ASSERT_EQ(r.triples.size(), 1u);
    EXPECT_FALSE(r.partial);
    EXPECT_NE(r.triples[0].pos_doc_id, r.triples[0].neg_doc_id);
    EXPECT_EQ(r.triples[0].source, kSourcePipeline);
}

TEST(Synthesis, EveryTriplePassesTheReplayCheck)
{
    auto fx = fixtures::topic_fixture();
    auto index = sparse::InvertedIndex::build(fx.docs);
    SalienceQueryGenerator qg(index, stop());
    SynthesisOptions opts;
    opts.count = 150;
    opts.seed = 4;
    auto r = synthesize_triples(fx.docs, index, qg, stop(), opts);
    ASSERT_EQ(r.triples.size(), 150u);
    ASSERT_EQ(r.stage1_queries.size(), r.triples.size());
    std::unordered_map<std::string, const corpus::Document*> by_id;
    for (const auto& d : fx.docs) {
        by_id[d.doc_id] = &d;
    }
    for (std::size_t i = 0; i < r.triples.size(); ++i) {
        const auto& t = r.triples[i];
        EXPECT_NO_THROW(t.validate());
        auto list = sparse::search_topk(index, corpus::preprocess_query(r.stage1_queries[i], stop()).terms, 0,
                                        opts.retrieval_depth);
        const auto rp = rank_of(list, t.pos_doc_id);
        const auto rn = rank_of(list, t.neg_doc_id);
        EXPECT_LT(rp, list.size());
        EXPECT_LT(rn, list.size());
        EXPECT_LT(rp, rn);
        auto scores = qg.contrastive_salience(*by_id.at(t.pos_doc_id), *by_id.at(t.neg_doc_id));
        for (const auto& term : corpus::analyze(t.query)) {
            auto it = std::find_if(scores.begin(), scores.end(), [&](const TermScore& s) { return s.term == term; });
            ASSERT_NE(it, scores.end());
            EXPECT_GT(it->score, 0.0);
        }
    }
}

TEST(Synthesis, Stage1TriplesAreOptIn)
{
    auto fx = fixtures::topic_fixture(small_topics());
    auto index = sparse::InvertedIndex::build(fx.docs);
    SalienceQueryGenerator qg(index, stop());
    SynthesisOptions opts;
    opts.count = 10;
    opts.include_stage1 = true;
    auto r = synthesize_triples(fx.docs, index, qg, stop(), opts);
    ASSERT_EQ(r.triples.size(), 20u);
    for (std::size_t i = 0; i < r.triples.size(); i += 2) {
        EXPECT_EQ(r.triples[i].source, kSourcePipeline);
        EXPECT_EQ(r.triples[i + 1].source, kSourceStage1);
        EXPECT_EQ(r.triples[i + 1].query, r.stage1_queries[i]);
        EXPECT_EQ(r.triples[i + 1].pos_doc_id, r.triples[i].pos_doc_id);
    }
}

TEST(Synthesis, ErrorsAndPartialResults)
{
    std::vector<corpus::Document> docs{doc("a", "alpha"), doc("b", "beta")};
    auto index = sparse::InvertedIndex::build(docs);
    SalienceQueryGenerator qg(index, stop());
    SynthesisOptions opts;
    opts.count = 0;
    EXPECT_THROW(synthesize_triples(docs, index, qg, stop(), opts), ConfigError);
    // No query retrieves two documents, so nothing can be assembled.
    opts.count = 3;
    auto r = synthesize_triples(docs, index, qg, stop(), opts);
    EXPECT_TRUE(r.partial);
    EXPECT_TRUE(r.triples.empty());
}

TEST(Synthesis, IsDeterministic)
{
    auto fx = fixtures::topic_fixture(small_topics());
    auto index = sparse::InvertedIndex::build(fx.docs);
    SalienceQueryGenerator qg(index, stop());
    SynthesisOptions opts;
    opts.count = 30;
    opts.seed = 8;
    EXPECT_EQ(synthesize_triples(fx.docs, index, qg, stop(), opts).triples,
              synthesize_triples(fx.docs, index, qg, stop(), opts).triples);
}

TEST(Triples, FileRoundTripAndErrors)
{
    cmt::testing::TempDir dir;
    std::vector<WeakTriple> triples{{"spike protein", "a", "b", std::string(kSourcePipeline)},
                                    {"ace2", "c", "a", std::string(kSourceExternal)}};
    write_triples(dir / "t.jsonl", triples);
    EXPECT_EQ(read_triples(dir / "t.jsonl"), triples);
    {
        std::ofstream out(dir / "bad.jsonl");
        out << R"({"query":"q","pos_doc_id":"a","neg_doc_id":"b"})" << "\n"
            << R"({"query":"q","pos_doc_id":"a","neg_doc_id":"a"})" << "\n";
    }
    try {
        read_triples(dir / "bad.jsonl");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(read_triples(dir / "missing.jsonl"), DependencyError);
}

TEST(PolicyFeatures, MatchIndependentRecomputation)
{
    std::vector<corpus::Document> docs{doc("a", "spike protein binding"), doc("b", "protein folding"),
                                       doc("c", "spike protein binding"), doc("d", "unrelated text")};
    auto index = sparse::InvertedIndex::build(docs);
    rerank::FeatureExtractor extractor(index);
    WeakTriple t{"the spike protein", "a", "b"};
    auto f = instance_features(t, extractor, stop());
    const std::vector<std::string> terms{"spike", "protein"};
    const double sp = sparse::bm25_score(index, terms, 0);
    const double sn = sparse::bm25_score(index, terms, 1);
    EXPECT_EQ(f[0], sp);
    EXPECT_EQ(f[1], sn);
    EXPECT_EQ(f[2], sp - sn);
    EXPECT_EQ(f[3], 0.0);
    EXPECT_EQ(f[4], 2.0);
    EXPECT_EQ(f[5], 1.0);
    EXPECT_EQ(instance_features(t, extractor, stop()), f);
    // Same text under different ids: every difference feature vanishes.
    auto same = instance_features(WeakTriple{"spike protein", "a", "c"}, extractor, stop());
    EXPECT_EQ(same[2], 0.0);
    EXPECT_EQ(same[3], 0.0);
}

TEST(Reinforce, ZeroAdvantageLeavesWeightsUnchanged)
{
    SelectionInstance inst;
    inst.policy_features = {1.0, 0.5, 0.5, 0.0, 2.0, 1.0};
    SelectorPolicy policy;
    policy.weights = {0.1, -0.2, 0.3, 0.0, 0.05, -0.1};
    const auto before = policy.weights;
    std::vector<SelectionInstance> batch{inst, inst};
    reinforce_update(policy, batch, {true, false}, 0.0);
    EXPECT_EQ(policy.weights, before);
    EXPECT_EQ(policy.baseline, 0.0);
    EXPECT_EQ(policy.updates, 1u);
}

TEST(Reinforce, SelectedLogitMovesWithAdvantageSign)
{
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        SelectionInstance inst;
        for (auto& x : inst.policy_features) {
            x = rng.uniform(-2, 2);
        }
        for (double reward : {0.3, -0.3}) {
            SelectorPolicy policy;
            for (auto& w : policy.weights) {
                w = rng.uniform(-1, 1);
            }
            const double before = policy.logit(inst.policy_features);
            reinforce_update(policy, std::vector<SelectionInstance>{inst}, {true}, reward);
            const double after = policy.logit(inst.policy_features);
            if (reward > 0) {
                EXPECT_GT(after, before);
            } else {
                EXPECT_LT(after, before);
            }
        }
    }
}

TEST(Reinforce, BaselineIsTheRunningMeanReward)
{
    SelectorPolicy policy;
    SelectionInstance inst;
    std::vector<SelectionInstance> batch{inst};
    const std::vector<double> rewards{0.2, -0.1, 0.5, 0.0};
    double sum = 0;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        reinforce_update(policy, batch, {false}, rewards[i]);
        sum += rewards[i];
        EXPECT_NEAR(policy.baseline, sum / static_cast<double>(i + 1), 1e-15);
    }
}

TEST(Policy, ProbabilityStaysInsideTheOpenInterval)
{
    SelectorPolicy policy;
    policy.weights = {1e6, 0, 0, 0, 0, 0};
    EXPECT_LT(policy.probability({1, 0, 0, 0, 0, 0}), 1.0);
    EXPECT_GT(policy.probability({-1, 0, 0, 0, 0, 0}), 0.0);
    policy.weights = {};
    EXPECT_EQ(policy.probability({3, 1, 2, 0, 1, 1}), 0.5);
}

TEST(Policy, SaveLoadRoundTrip)
{
    cmt::testing::TempDir dir;
    SelectorPolicy p;
    p.weights = {0.1, 0.2, -0.3, 0.4, 0.5, -0.6};
    p.baseline = 0.25;
    p.updates = 9;
    p.learning_rate = 0.01;
    p.save(dir / "p.ckpt");
    auto back = SelectorPolicy::load(dir / "p.ckpt");
    EXPECT_EQ(back.weights, p.weights);
    EXPECT_EQ(back.baseline, p.baseline);
    EXPECT_EQ(back.updates, p.updates);
    EXPECT_EQ(back.learning_rate, p.learning_rate);
}

TEST(TargetSetTest, Bm25RankerReproducesBaseNdcg)
{
    SelectionWorld w(small_topics());
    EXPECT_NEAR(w.target.ndcg(rerank::Ranker::bm25_only()), eval::mean_ndcg(w.base, w.fx.full_qrels, 10), 1e-12);
    EXPECT_THROW(TargetSet(w.extractor, w.fx.queries, corpus::Qrels{}, w.base, 10), InvalidInput);
}

TEST(SelectionStep, KeepsTrialRankerOnlyForNonNegativeReward)
{
    SelectionWorld w(small_topics());
    auto labelled = fixtures::selection_triples(w.fx, 20, 20, 3);
    auto instances = prepare_instances(labelled.triples, w.extractor, stop());
    Rng rng(6);
    SelectorPolicy policy;
    rerank::Ranker ranker;
    for (int step = 0; step < 40; ++step) {
        std::vector<SelectionInstance> batch;
        for (int i = 0; i < 4; ++i) {
            batch.push_back(instances[rng.below(instances.size())]);
        }
        const auto before = ranker;
        auto r = reinfoselect_step(policy, batch, ranker, w.target, rng, {0.05, false});
        EXPECT_EQ(r.reward, r.ndcg_after - r.ndcg_before);
        EXPECT_EQ(r.ranker_updated, r.selected > 0 && r.reward >= 0);
        if (!r.ranker_updated) {
            EXPECT_EQ(ranker.weights, before.weights);
        }
        if (r.selected == 0) {
            EXPECT_EQ(r.reward, 0.0);
        }
    }
}

TEST(SelectionRun, StaysFiniteOverTenThousandSteps)
{
    SelectionWorld w(small_topics());
    auto labelled = fixtures::selection_triples(w.fx, 20, 20, 4);
    auto instances = prepare_instances(labelled.triples, w.extractor, stop());
    SelectorPolicy policy;
    policy.learning_rate = 0.5;
    rerank::Ranker ranker;
    SelectionRunOptions opts;
    opts.steps = 10000;
    opts.batch_size = 4;
    opts.seed = 1;
    auto history = run_selection(policy, instances, ranker, w.target, opts);
    EXPECT_EQ(history.steps.size(), 10000u);
    EXPECT_EQ(history.checks.size(), 3333u);
    for (double x : policy.weights) {
        EXPECT_TRUE(std::isfinite(x));
    }
    for (const auto& inst : instances) {
        const double p = policy.probability(inst.policy_features);
        EXPECT_GT(p, 0.0);
        EXPECT_LT(p, 1.0);
    }
}

TEST(SelectionRun, IsDeterministicForASeed)
{
    SelectionWorld w(small_topics());
    auto labelled = fixtures::selection_triples(w.fx, 20, 20, 5);
    auto instances = prepare_instances(labelled.triples, w.extractor, stop());
    SelectionRunOptions opts;
    opts.steps = 60;
    opts.batch_size = 8;
    opts.seed = 3;
    SelectorPolicy pa, pb;
    rerank::Ranker ra, rb;
    run_selection(pa, instances, ra, w.target, opts);
    run_selection(pb, instances, rb, w.target, opts);
    EXPECT_EQ(pa.weights, pb.weights);
    EXPECT_EQ(pa.baseline, pb.baseline);
    EXPECT_EQ(ra.weights, rb.weights);
}

TEST(SelectionRun, SelectAllTrainsOnEveryInstance)
{
    SelectionWorld w(small_topics());
    auto labelled = fixtures::selection_triples(w.fx, 10, 0, 6);
    auto instances = prepare_instances(labelled.triples, w.extractor, stop());
    SelectionRunOptions opts;
    opts.steps = 5;
    opts.batch_size = 4;
    opts.select_all = true;
    SelectorPolicy policy;
    rerank::Ranker ranker;
    auto h = run_selection(policy, instances, ranker, w.target, opts);
    for (const auto& s : h.steps) {
        EXPECT_EQ(s.selected, 4u);
        EXPECT_TRUE(s.ranker_updated);
    }
    EXPECT_EQ(policy.updates, 0u);
    EXPECT_THROW(run_selection(policy, std::vector<SelectionInstance>{}, ranker, w.target, opts), InvalidInput);
}
