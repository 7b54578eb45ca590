#include "cmt/weaksup.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cmt/binary_io.hpp"
#include "cmt/error.hpp"
#include "cmt/eval.hpp"

namespace cmt::weaksup {

namespace {

constexpr std::string_view kPolicyMagic = "CMTPOLCY";
constexpr std::uint32_t kPolicyVersion = 1;

/// Content-term frequencies of a document in first-occurrence order.
std::vector<std::pair<std::string, std::uint32_t>> content_terms(const corpus::Document& doc,
                                                                 const corpus::StopwordSet& stopwords)
{
    std::vector<std::pair<std::string, std::uint32_t>> out;
    std::unordered_map<std::string, std::size_t> slot;
    for (auto& t : corpus::analyze(doc.text())) {
        if (stopwords.contains(t)) {
            continue;
        }
        auto [it, inserted] = slot.emplace(t, out.size());
        if (inserted) {
            out.emplace_back(std::move(t), 1);
        } else {
            ++out[it->second].second;
        }
    }
    return out;
}

double logistic(double z)
{
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

SalienceQueryGenerator::SalienceQueryGenerator(const sparse::InvertedIndex& index,
                                               const corpus::StopwordSet& stopwords, std::size_t max_terms)
    : index_(index), stopwords_(stopwords), max_terms_(max_terms)
{
    if (max_terms_ == 0) {
        throw ConfigError("max query terms must be at least 1");
    }
}

std::vector<TermScore> SalienceQueryGenerator::salience(const corpus::Document& doc) const
{
    const double n = static_cast<double>(index_.doc_count());
    std::vector<TermScore> out;
    for (const auto& [term, tf] : content_terms(doc, stopwords_)) {
        const double df = std::max<double>(index_.df(term), 1.0);
        out.push_back({term, static_cast<double>(tf) * std::log(1.0 + n / df)});
    }
    return out;
}

std::vector<TermScore> SalienceQueryGenerator::contrastive_salience(const corpus::Document& positive,
                                                                    const corpus::Document& negative) const
{
    std::unordered_map<std::string, double> neg;
    for (const auto& s : salience(negative)) {
        neg.emplace(s.term, s.score);
    }
    auto out = salience(positive);
    for (auto& s : out) {
        if (auto it = neg.find(s.term); it != neg.end()) {
            s.score -= it->second;
        }
    }
    return out;
}

std::string SalienceQueryGenerator::pick(const std::vector<TermScore>& scored, bool require_positive) const
{
    std::vector<const TermScore*> ranked;
    for (const auto& s : scored) {
        if (!require_positive || s.score > 0.0) {
            ranked.push_back(&s);
        }
    }
    std::sort(ranked.begin(), ranked.end(), [](const TermScore* a, const TermScore* b) {
        return a->score != b->score ? a->score > b->score : a->term < b->term;
    });
    if (ranked.size() > max_terms_) {
        ranked.resize(max_terms_);
    }
    std::set<const TermScore*> chosen(ranked.begin(), ranked.end());
    std::string query;
    for (const auto& s : scored) {
        if (chosen.contains(&s)) {
            if (!query.empty()) {
                query += ' ';
            }
            query += s.term;
        }
    }
    return query;
}

std::string SalienceQueryGenerator::generate(const corpus::Document& doc) const
{
    auto q = pick(salience(doc), false);
    if (q.empty()) {
        throw GenerationError("document \"" + doc.doc_id + "\" has no content terms");
    }
    return q;
}

std::string SalienceQueryGenerator::contrast_generate(const corpus::Document& positive,
                                                      const corpus::Document& negative) const
{
    if (positive.doc_id == negative.doc_id) {
        throw GenerationError("degenerate pair: \"" + positive.doc_id + "\" given as both documents");
    }
    auto q = pick(contrastive_salience(positive, negative), true);
    if (q.empty()) {
        throw GenerationError("degenerate pair: no term of \"" + positive.doc_id + "\" is more salient than in \"" +
                              negative.doc_id + "\"");
    }
    return q;
}

void WeakTriple::validate() const
{
    if (query.empty()) {
        throw InvalidInput("weak triple has an empty query");
    }
    if (pos_doc_id == neg_doc_id) {
        throw InvalidInput("weak triple uses \"" + pos_doc_id + "\" as both positive and negative");
    }
}

std::vector<WeakTriple> read_triples(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DependencyError("cannot open: " + path.string());
    }
    std::vector<WeakTriple> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        WeakTriple t;
        try {
            auto rec = nlohmann::json::parse(line);
            t.query = rec.at("query").get<std::string>();
            t.pos_doc_id = rec.at("pos_doc_id").get<std::string>();
            t.neg_doc_id = rec.at("neg_doc_id").get<std::string>();
            t.source = rec.value("source", std::string(kSourceExternal));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("malformed weak triple: ") + e.what(), line_no);
        }
        try {
            t.validate();
        } catch (const InvalidInput& e) {
            throw ParseError(e.what(), line_no);
        }
        out.push_back(std::move(t));
    }
    return out;
}

void write_triples(const std::filesystem::path& path, std::span<const WeakTriple> triples)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open for writing: " + path.string());
    }
    for (const auto& t : triples) {
        nlohmann::ordered_json rec;
        rec["query"] = t.query;
        rec["pos_doc_id"] = t.pos_doc_id;
        rec["neg_doc_id"] = t.neg_doc_id;
        rec["source"] = t.source;
        out << rec.dump() << '\n';
    }
}

SynthesisResult synthesize_triples(const std::vector<corpus::Document>& docs, const sparse::InvertedIndex& index,
                                   const QueryGenerator& generator, const corpus::StopwordSet& stopwords,
                                   const SynthesisOptions& options)
{
    if (options.count == 0) {
        throw ConfigError("triple count must be at least 1");
    }
    if (options.retrieval_depth < 2) {
        throw ConfigError("retrieval depth must be at least 2");
    }
    if (docs.empty()) {
        throw InvalidInput("no documents to synthesize from");
    }
    std::unordered_map<std::string, const corpus::Document*> by_id;
    for (const auto& d : docs) {
        by_id.emplace(d.doc_id, &d);
    }
    Rng rng(options.seed);
    SynthesisResult result;
    std::size_t produced = 0;
    const std::size_t budget = options.count * std::max<std::size_t>(options.max_attempts_per_triple, 1);
    for (std::size_t attempt = 0; attempt < budget && produced < options.count; ++attempt) {
        const auto& seed_doc = docs[rng.below(docs.size())];
        std::string stage1;
        try {
            stage1 = generator.generate(seed_doc);
        } catch (const GenerationError&) {
            continue;
        }
        auto terms = corpus::preprocess_query(stage1, stopwords).terms;
        if (terms.empty()) {
            continue;
        }
        auto list = sparse::search_topk(index, terms, 0, options.retrieval_depth);
        if (list.size() < 2) {
            continue;
        }
        const std::size_t half = (list.size() + 1) / 2;
        const auto& pos_id = list.entries[rng.below(half)].doc_id;
        const auto& neg_id = list.entries[half + rng.below(list.size() - half)].doc_id;
        auto pos = by_id.find(pos_id);
        auto neg = by_id.find(neg_id);
        if (pos == by_id.end() || neg == by_id.end()) {
            continue;
        }
        std::string contrast;
        try {
            contrast = generator.contrast_generate(*pos->second, *neg->second);
        } catch (const GenerationError&) {
            continue;
        }
        result.triples.push_back({contrast, pos_id, neg_id, std::string(kSourcePipeline)});
        result.stage1_queries.push_back(stage1);
        if (options.include_stage1) {
            result.triples.push_back({stage1, pos_id, neg_id, std::string(kSourceStage1)});
            result.stage1_queries.push_back(stage1);
        }
        ++produced;
    }
    result.partial = produced < options.count;
    return result;
}

PolicyFeatures instance_features(const WeakTriple& triple, const rerank::FeatureExtractor& extractor,
                                 const corpus::StopwordSet& stopwords)
{
    return prepare_instances(std::span<const WeakTriple>(&triple, 1), extractor, stopwords).front().policy_features;
}

double SelectorPolicy::logit(const PolicyFeatures& x) const
{
    double z = 0.0;
    for (std::size_t i = 0; i < kPolicyFeatureCount; ++i) {
        z += weights[i] * x[i];
    }
    return z;
}

double SelectorPolicy::probability(const PolicyFeatures& x) const
{
    // Clamped so the policy never becomes deterministic.
    return std::clamp(logistic(logit(x)), 1e-6, 1.0 - 1e-6);
}

void SelectorPolicy::save(const std::filesystem::path& path) const
{
    io::BinaryWriter out(path);
    out.magic(kPolicyMagic);
    out.put(kPolicyVersion);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(kPolicyFeatureCount));
    out.put_array(weights.data(), weights.size());
    out.put(baseline);
    out.put<std::uint64_t>(updates);
    out.put(learning_rate);
    out.finish();
}

SelectorPolicy SelectorPolicy::load(const std::filesystem::path& path)
{
    io::BinaryReader in(path);
    in.expect_magic(kPolicyMagic);
    if (in.get<std::uint32_t>() != kPolicyVersion || in.get<std::uint32_t>() != kPolicyFeatureCount) {
        throw ParseError(path.string() + ": unsupported selector policy file");
    }
    SelectorPolicy p;
    in.get_array(p.weights.data(), p.weights.size());
    p.baseline = in.get<double>();
    p.updates = in.get<std::uint64_t>();
    p.learning_rate = in.get<double>();
    return p;
}

std::vector<SelectionInstance> prepare_instances(std::span<const WeakTriple> triples,
                                                 const rerank::FeatureExtractor& extractor,
                                                 const corpus::StopwordSet& stopwords)
{
    std::vector<SelectionInstance> out;
    out.reserve(triples.size());
    for (const auto& t : triples) {
        t.validate();
        auto terms = corpus::preprocess_query(t.query, stopwords).terms;
        auto ctx = extractor.prepare(terms);
        SelectionInstance inst;
        inst.triple = t;
        inst.ranker_pair.positive = extractor.extract(ctx, t.pos_doc_id);
        inst.ranker_pair.negative = extractor.extract(ctx, t.neg_doc_id);
        const auto& p = inst.ranker_pair.positive;
        const auto& n = inst.ranker_pair.negative;
        inst.policy_features = {p[rerank::kBm25],
                                n[rerank::kBm25],
                                p[rerank::kBm25] - n[rerank::kBm25],
                                p[rerank::kDenseSimilarity] - n[rerank::kDenseSimilarity],
                                static_cast<double>(terms.size()),
                                1.0};
        out.push_back(std::move(inst));
    }
    return out;
}

TargetSet::TargetSet(const rerank::FeatureExtractor& extractor, const std::vector<corpus::Query>& queries,
                     const corpus::Qrels& qrels, const Run& base, std::size_t depth)
    : qrels_(qrels), depth_(depth)
{
    if (qrels.judgments.empty()) {
        throw InvalidInput("target set needs at least one judged query");
    }
    if (depth_ == 0) {
        throw ConfigError("rerank depth must be at least 1");
    }
    for (const auto& q : queries) {
        if (!qrels.judgments.contains(q.query_id)) {
            continue;
        }
        Candidates c;
        c.base = base.at(q.query_id);
        c.base.query_id = q.query_id;
        auto ctx = extractor.prepare(q.terms);
        for (std::size_t i = 0; i < std::min(depth_, c.base.size()); ++i) {
            const auto& id = c.base.entries[i].doc_id;
            c.features.emplace(id, extractor.extract(ctx, id));
        }
        queries_.push_back(std::move(c));
    }
}

Run TargetSet::rank(const rerank::Ranker& ranker) const
{
    Run run;
    for (const auto& c : queries_) {
        run.lists[c.base.query_id] =
            rerank::rerank(ranker, c.base, depth_, [&](const std::string& id) { return c.features.at(id); });
    }
    return run;
}

double TargetSet::ndcg(const rerank::Ranker& ranker, std::size_t k) const
{
    return eval::mean_ndcg(rank(ranker), qrels_, k);
}

void reinforce_update(SelectorPolicy& policy, std::span<const SelectionInstance> batch,
                      const std::vector<bool>& actions, double reward)
{
    const double advantage = reward - policy.baseline;
    PolicyFeatures grad{};
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& x = batch[i].policy_features;
        const double p = policy.probability(x);
        // d/dw log p(a | x) = (a - p) x for a Bernoulli-logistic policy.
        const double coeff = (actions[i] ? 1.0 : 0.0) - p;
        for (std::size_t f = 0; f < kPolicyFeatureCount; ++f) {
            grad[f] += coeff * x[f];
        }
    }
    for (std::size_t f = 0; f < kPolicyFeatureCount; ++f) {
        policy.weights[f] += policy.learning_rate * advantage * grad[f];
        if (!std::isfinite(policy.weights[f])) {
            throw NumericError("selector policy weights became non-finite");
        }
    }
    ++policy.updates;
    policy.baseline += (reward - policy.baseline) / static_cast<double>(policy.updates);
}

StepResult reinfoselect_step(SelectorPolicy& policy, std::span<const SelectionInstance> batch,
                             rerank::Ranker& ranker, const TargetSet& target, Rng& rng, const SelectOptions& options)
{
    if (batch.empty()) {
        throw InvalidInput("selection batch is empty");
    }
    std::vector<bool> actions(batch.size());
    std::vector<rerank::FeaturePair> chosen;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        actions[i] = rng.bernoulli(policy.probability(batch[i].policy_features));
        if (actions[i]) {
            chosen.push_back(batch[i].ranker_pair);
        }
    }
    StepResult result;
    result.selected = chosen.size();
    result.ndcg_before = target.ndcg(ranker);
    result.ndcg_after = result.ndcg_before;
    rerank::Ranker trial = ranker;
    if (!chosen.empty()) {
        rerank::pairwise_train_step(trial, chosen, options.ranker_learning_rate);
        result.ndcg_after = target.ndcg(trial);
        result.reward = result.ndcg_after - result.ndcg_before;
    }
    reinforce_update(policy, batch, actions, result.reward);
    if (!chosen.empty() && (result.reward >= 0.0 || options.keep_all_updates)) {
        ranker = trial;
        result.ranker_updated = true;
    }
    return result;
}

SelectionHistory run_selection(SelectorPolicy& policy, std::span<const SelectionInstance> instances,
                               rerank::Ranker& ranker, const TargetSet& target, const SelectionRunOptions& options)
{
    if (instances.empty()) {
        throw InvalidInput("no weak-supervision instances to select from");
    }
    if (options.batch_size == 0) {
        throw ConfigError("selection batch size must be positive");
    }
    Rng rng(options.seed);
    std::vector<std::size_t> order(instances.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch_size = std::min(options.batch_size, instances.size());
    SelectionHistory history;
    std::vector<SelectionInstance> batch;
    std::vector<rerank::FeaturePair> pairs;
    for (std::size_t step = 0; step < options.steps; ++step) {
        for (std::size_t i = 0; i < batch_size; ++i) {
            std::swap(order[i], order[i + rng.below(order.size() - i)]);
        }
        batch.clear();
        for (std::size_t i = 0; i < batch_size; ++i) {
            batch.push_back(instances[order[i]]);
        }
        if (options.select_all) {
            pairs.clear();
            for (const auto& inst : batch) {
                pairs.push_back(inst.ranker_pair);
            }
            StepResult r;
            r.selected = pairs.size();
            r.ndcg_before = target.ndcg(ranker);
            rerank::pairwise_train_step(ranker, pairs, options.step.ranker_learning_rate);
            r.ndcg_after = target.ndcg(ranker);
            r.reward = r.ndcg_after - r.ndcg_before;
            r.ranker_updated = true;
            history.steps.push_back(r);
        } else {
            history.steps.push_back(reinfoselect_step(policy, batch, ranker, target, rng, options.step));
        }
        if (options.eval_every > 0 && (step + 1) % options.eval_every == 0) {
            history.checks.emplace_back(step + 1, history.steps.back().ranker_updated
                                                      ? history.steps.back().ndcg_after
                                                      : history.steps.back().ndcg_before);
        }
    }
    return history;
}

}  // namespace cmt::weaksup
