#include "cmt/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cmt/corpus.hpp"
#include "cmt/dapt.hpp"
#include "cmt/dense.hpp"
#include "cmt/error.hpp"
#include "cmt/eval.hpp"
#include "cmt/fixtures.hpp"
#include "cmt/rerank.hpp"
#include "cmt/sparse.hpp"
#include "cmt/subword.hpp"
#include "cmt/weaksup.hpp"

namespace cmt::pipeline {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value)
{
    T out{};
    auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
        throw ConfigError(key + ": expected a non-negative integer, got \"" + value + "\"");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value)
{
    double out = 0.0;
    auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc{} || res.ptr != value.data() + value.size()) {
        throw ConfigError(key + ": expected a number, got \"" + value + "\"");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1" || value == "yes") {
        return true;
    }
    if (value == "false" || value == "0" || value == "no") {
        return false;
    }
    throw ConfigError(key + ": expected true or false, got \"" + value + "\"");
}

std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string join_terms(const std::vector<std::string>& terms)
{
    std::string out;
    for (const auto& t : terms) {
        if (!out.empty()) {
            out += ' ';
        }
        out += t;
    }
    return out;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL)
{
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Independent stream per stage so adding a stage never shifts another's draws.
std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage)
{
    std::uint64_t z = seed ^ fnv1a(stage);
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::size_t count_lines(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DependencyError("cannot open: " + path.string());
    }
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (!trim(line).empty()) {
            ++n;
        }
    }
    return n;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open for writing: " + path.string());
    }
    out << text;
}

class DirectoryLock {
  public:
    explicit DirectoryLock(const fs::path& dir) : path_(dir / artifact::kLock)
    {
        fs::create_directories(dir);
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (f == nullptr) {
            throw ConfigError("work directory is locked by another run (remove " + path_.string() +
                              " if no run is active)");
        }
        std::fclose(f);
    }
    ~DirectoryLock()
    {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

  private:
    fs::path path_;
};

/// Shared state of one pipeline invocation. Stages read inputs only through
/// files; nothing computed by one stage is handed to the next in memory.
class Context {
  public:
    Context(const PipelineConfig& config, const std::function<void(const std::string&)>& log)
        : config_(config), log_(log)
    {}

    const PipelineConfig& config() const { return config_; }
    fs::path work(const char* name) const { return config_.work_dir / name; }

    void log(const std::string& message) const
    {
        if (log_) {
            log_(message);
        }
    }

    /// Records an input of the running stage; throws DependencyError if absent.
    const fs::path& input(const fs::path& path, const std::string& what)
    {
        if (path.empty()) {
            throw DependencyError("missing " + what + ": no path configured");
        }
        if (!fs::exists(path)) {
            throw DependencyError("missing " + what + ": " + path.string());
        }
        inputs_.emplace_back(path.filename().string(), file_hash(path));
        return path;
    }

    fs::path artifact_input(const char* name, const char* producer)
    {
        fs::path p = work(name);
        if (!fs::exists(p)) {
            throw DependencyError(std::string("missing artifact ") + name + " (run the " + producer + " stage first)");
        }
        input(p, name);
        return p;
    }

    bool optional_input(const fs::path& path)
    {
        if (path.empty() || !fs::exists(path)) {
            return false;
        }
        input(path, path.filename().string());
        return true;
    }

    void produced(const char* name) { outputs_.push_back(name); }

    const corpus::StopwordSet& stopwords()
    {
        if (!config_.stopwords.empty()) {
            if (!stopwords_) {
                stopwords_ = corpus::load_stopwords(input(config_.stopwords, "stopword list"));
            }
            return *stopwords_;
        }
        return corpus::default_stopwords();
    }

    std::vector<corpus::Query> queries()
    {
        return corpus::load_queries(artifact_input(artifact::kQueries, "ingest"), stopwords());
    }

    std::vector<corpus::Document> docs()
    {
        return corpus::load_corpus(artifact_input(artifact::kCorpus, "ingest"));
    }

    corpus::Qrels qrels()
    {
        std::vector<std::string> warnings;
        auto q = eval::read_qrels(input(config_.qrels, "qrels"), &warnings);
        for (const auto& w : warnings) {
            log("warning: " + w);
        }
        return q;
    }

    void begin_stage(const std::string& stage)
    {
        stage_ = stage;
        inputs_.clear();
        outputs_.clear();
        stopwords_.reset();
    }

    StageRecord end_stage(std::uint64_t seed, double seconds)
    {
        StageRecord rec{stage_, seconds, outputs_};
        std::string inputs;
        for (const auto& [name, hash] : inputs_) {
            if (!inputs.empty()) {
                inputs += ';';
            }
            inputs += name + '=' + hash;
        }
        std::ofstream out(work(artifact::kManifest), std::ios::binary | std::ios::app);
        char wall[32];
        std::snprintf(wall, sizeof(wall), "%.3f", seconds);
        for (const auto& a : outputs_) {
            out << stage_ << '\t' << a << '\t' << file_hash(work(a.c_str())) << '\t'
                << (inputs.empty() ? "-" : inputs) << '\t' << seed << '\t' << wall << '\n';
        }
        return rec;
    }

  private:
    const PipelineConfig& config_;
    const std::function<void(const std::string&)>& log_;
    std::string stage_;
    std::vector<std::pair<std::string, std::string>> inputs_;
    std::vector<std::string> outputs_;
    std::optional<corpus::StopwordSet> stopwords_;
};

/// Dense encoder, dense index and vocabulary, when train-dense has run.
struct DenseArtifacts {
    std::optional<dense::DenseEncoder> encoder;
    std::optional<dense::DenseIndex> index;
    std::optional<corpus::SubwordVocab> vocab;

    static DenseArtifacts load(Context& ctx)
    {
        DenseArtifacts out;
        if (ctx.optional_input(ctx.work(artifact::kEncoder)) && ctx.optional_input(ctx.work(artifact::kDenseIndex)) &&
            ctx.optional_input(ctx.work(artifact::kVocab))) {
            out.encoder = dense::DenseEncoder::load(ctx.work(artifact::kEncoder));
            out.index = dense::DenseIndex::load(ctx.work(artifact::kDenseIndex));
            out.vocab = corpus::SubwordVocab::load(ctx.work(artifact::kVocab));
        }
        return out;
    }

    rerank::FeatureExtractor extractor(const sparse::InvertedIndex& index, const sparse::Bm25Params& params) const
    {
        if (encoder) {
            return rerank::FeatureExtractor(index, params, &*encoder, &*this->index, &*vocab);
        }
        return rerank::FeatureExtractor(index, params);
    }
};

sparse::Bm25Params bm25_params(const PipelineConfig& c) { return sparse::Bm25Params{c.k1, c.b}; }

Run read_run_logged(Context& ctx, const fs::path& path)
{
    std::vector<std::string> warnings;
    Run run = eval::read_run(path, &warnings);
    for (const auto& w : warnings) {
        ctx.log("warning: " + path.filename().string() + ": " + w);
    }
    return run;
}

void stage_ingest(Context& ctx, std::uint64_t)
{
    const auto& c = ctx.config();
    auto docs = corpus::load_corpus(ctx.input(c.corpus, "corpus"));
    std::size_t excluded = 0;
    double excluded_fraction = 0.0;
    if (!c.date_cutoff.empty()) {
        auto filtered = corpus::date_filter(docs, *corpus::parse_date(c.date_cutoff));
        excluded = filtered.excluded.size();
        excluded_fraction = filtered.excluded_fraction;
        docs = std::move(filtered.kept);
    }
    if (docs.empty()) {
        throw InvalidInput("no documents left after ingest");
    }
    auto queries = corpus::load_queries(ctx.input(c.queries, "queries"), ctx.stopwords());
    std::vector<corpus::QueryId> all_stopword;
    for (const auto& q : queries) {
        if (corpus::preprocess_query(q.raw_text, ctx.stopwords()).all_stopwords) {
            all_stopword.push_back(q.query_id);
        }
    }
    corpus::write_corpus(ctx.work(artifact::kCorpus), docs);
    ctx.produced(artifact::kCorpus);
    corpus::write_queries(ctx.work(artifact::kQueries), queries);
    ctx.produced(artifact::kQueries);

    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (const auto& d : docs) {
        texts.push_back(d.text());
    }
    auto vocab = corpus::train_subword_vocab(texts, c.vocab_size);
    vocab.save(ctx.work(artifact::kVocab));
    ctx.produced(artifact::kVocab);

    std::ostringstream report;
    report << "documents\t" << docs.size() << '\n'
           << "excluded_by_date\t" << excluded << '\n'
           << "excluded_fraction\t" << format_double(excluded_fraction) << '\n'
           << "queries\t" << queries.size() << '\n'
           << "all_stopword_queries\t" << all_stopword.size() << '\n'
           << "vocab_size\t" << vocab.size() << '\n';
    write_text(ctx.work(artifact::kIngestReport), report.str());
    ctx.produced(artifact::kIngestReport);
    for (auto id : all_stopword) {
        ctx.log("warning: query " + std::to_string(id) + " is only stopwords");
    }
    ctx.log("ingest: " + std::to_string(docs.size()) + " docs, " + std::to_string(queries.size()) + " queries, vocab " +
            std::to_string(vocab.size()));
}

void stage_index(Context& ctx, std::uint64_t)
{
    const auto& c = ctx.config();
    auto docs = ctx.docs();
    auto queries = ctx.queries();
    auto index = sparse::InvertedIndex::build(docs);
    index.save(ctx.work(artifact::kIndex));
    ctx.produced(artifact::kIndex);
    Run run = sparse::search_all(index, queries, c.topk, bm25_params(c), c.threads);
    run.tag = "bm25";
    eval::write_run(ctx.work(artifact::kBm25Run), run);
    ctx.produced(artifact::kBm25Run);
    ctx.log("index: " + std::to_string(index.term_count()) + " terms over " + std::to_string(index.doc_count()) +
            " docs");
}

void stage_dapt(Context& ctx, std::uint64_t seed)
{
    const auto& c = ctx.config();
    auto docs = ctx.docs();
    auto vocab = corpus::SubwordVocab::load(ctx.artifact_input(artifact::kVocab, "ingest"));
    std::vector<std::vector<corpus::PieceId>> sequences;
    sequences.reserve(docs.size());
    for (const auto& d : docs) {
        sequences.push_back(corpus::tokenize(d.text(), vocab));
    }
    dapt::MlmModel model(vocab.size(), c.dim, seed);
    dapt::PretrainOptions opts;
    opts.epochs = c.dapt_epochs;
    opts.batch_size = c.dapt_batch;
    opts.learning_rate = c.dapt_lr;
    opts.mask_rate = c.mask_rate;
    opts.seed = seed;
    auto losses = dapt::pretrain(model, sequences, opts);
    dense::DenseEncoder(model.embeddings).save(ctx.work(artifact::kMlm));
    ctx.produced(artifact::kMlm);
    if (!losses.empty()) {
        ctx.log("dapt: mlm loss " + format_double(losses.front()) + " -> " + format_double(losses.back()));
    }
}

void stage_train_dense(Context& ctx, std::uint64_t seed)
{
    const auto& c = ctx.config();
    auto docs = ctx.docs();
    auto queries = ctx.queries();
    auto vocab = corpus::SubwordVocab::load(ctx.artifact_input(artifact::kVocab, "ingest"));
    auto index = sparse::InvertedIndex::load(ctx.artifact_input(artifact::kIndex, "index"));

    dense::DenseEncoder encoder(vocab.size(), c.dim, seed);
    if (ctx.optional_input(ctx.work(artifact::kMlm))) {
        auto pretrained = dense::DenseEncoder::load(ctx.work(artifact::kMlm));
        if (pretrained.dim() != c.dim || pretrained.vocab_size() != vocab.size()) {
            throw ConfigError("mlm.ckpt shape does not match dim/vocab; rerun dapt");
        }
        encoder = dapt::warm_start(encoder, pretrained.table());
        ctx.log("train-dense: warm start from mlm.ckpt");
    }

    std::vector<dense::TrainingTriple> triples;
    if (c.external_weak.empty() && c.qrels.empty()) {
        throw DependencyError("train-dense needs qrels or external_weak for training pairs");
    }
    if (!c.qrels.empty()) {
        triples = dense::sample_training_triples(queries, ctx.qrels(), index, c.negatives, c.topk, seed);
    }
    if (!c.external_weak.empty()) {
        std::size_t skipped = 0;
        for (const auto& t : weaksup::read_triples(ctx.input(c.external_weak, "external weak data"))) {
            auto terms = corpus::preprocess_query(t.query, ctx.stopwords()).terms;
            if (terms.empty() || !index.ordinal(t.pos_doc_id) || !index.ordinal(t.neg_doc_id)) {
                ++skipped;
                continue;
            }
            triples.push_back({join_terms(terms), t.pos_doc_id, {t.neg_doc_id}});
        }
        if (skipped > 0) {
            ctx.log("warning: skipped " + std::to_string(skipped) + " external triples with unknown docs");
        }
    }
    if (triples.empty()) {
        throw InvalidInput("no dense training pairs");
    }
    auto encoded = dense::encode_triples(triples, docs, vocab);
    dense::TrainOptions opts;
    opts.epochs = c.dense_epochs;
    opts.batch_size = c.dense_batch;
    opts.learning_rate = c.dense_lr;
    opts.seed = seed;
    auto losses = dense::train(encoder, encoded, opts);
    encoder.save(ctx.work(artifact::kEncoder));
    ctx.produced(artifact::kEncoder);

    auto dense_index = dense::build_dense_index(encoder, docs, vocab);
    dense_index.save(ctx.work(artifact::kDenseIndex));
    ctx.produced(artifact::kDenseIndex);

    Run run;
    run.tag = "dense";
    for (const auto& q : queries) {
        auto ids = corpus::tokenize(join_terms(q.terms), vocab);
        if (ids.empty()) {
            continue;
        }
        run.lists[q.query_id] = dense::dense_search_topk(dense_index, encoder, ids, q.query_id, c.topk);
    }
    eval::write_run(ctx.work(artifact::kDenseRun), run);
    ctx.produced(artifact::kDenseRun);
    ctx.log("train-dense: " + std::to_string(triples.size()) + " pairs, loss " + format_double(losses.front()) +
            " -> " + format_double(losses.back()));
}

void stage_synth_weak(Context& ctx, std::uint64_t seed)
{
    const auto& c = ctx.config();
    auto docs = ctx.docs();
    auto index = sparse::InvertedIndex::load(ctx.artifact_input(artifact::kIndex, "index"));
    weaksup::SalienceQueryGenerator generator(index, ctx.stopwords());
    weaksup::SynthesisOptions opts;
    opts.count = c.triples;
    opts.retrieval_depth = c.retrieval_depth;
    opts.seed = seed;
    opts.include_stage1 = c.include_stage1;
    auto result = weaksup::synthesize_triples(docs, index, generator, ctx.stopwords(), opts);
    if (result.partial) {
        ctx.log("warning: synthesized only " + std::to_string(result.triples.size()) + " of " +
                std::to_string(c.triples) + " requested triples");
    }
    auto triples = std::move(result.triples);
    std::size_t external = 0;
    if (!c.external_weak.empty()) {
        for (auto& t : weaksup::read_triples(ctx.input(c.external_weak, "external weak data"))) {
            triples.push_back(std::move(t));
            ++external;
        }
    }
    weaksup::write_triples(ctx.work(artifact::kWeak), triples);
    ctx.produced(artifact::kWeak);
    ctx.log("synth-weak: " + std::to_string(triples.size() - external) + " synthesized, " + std::to_string(external) +
            " external");
}

void stage_select_train(Context& ctx, std::uint64_t seed)
{
    const auto& c = ctx.config();
    auto queries = ctx.queries();
    auto index = sparse::InvertedIndex::load(ctx.artifact_input(artifact::kIndex, "index"));
    Run base = read_run_logged(ctx, ctx.artifact_input(artifact::kBm25Run, "index"));
    auto triples = weaksup::read_triples(ctx.artifact_input(artifact::kWeak, "synth-weak"));
    auto qrels = ctx.qrels();
    auto dense = DenseArtifacts::load(ctx);
    auto extractor = dense.extractor(index, bm25_params(c));

    std::vector<weaksup::WeakTriple> usable;
    for (auto& t : triples) {
        if (index.ordinal(t.pos_doc_id) && index.ordinal(t.neg_doc_id)) {
            usable.push_back(std::move(t));
        }
    }
    if (usable.size() < triples.size()) {
        ctx.log("warning: dropped " + std::to_string(triples.size() - usable.size()) +
                " weak triples naming unindexed docs");
    }
    auto instances = weaksup::prepare_instances(usable, extractor, ctx.stopwords());
    weaksup::TargetSet target(extractor, queries, qrels, base, c.depth);

    weaksup::SelectorPolicy policy;
    policy.learning_rate = c.policy_lr;
    rerank::Ranker ranker;
    weaksup::SelectionRunOptions opts;
    opts.steps = c.select_steps;
    opts.batch_size = c.select_batch;
    opts.seed = seed;
    opts.eval_every = c.eval_every_steps;
    opts.step.ranker_learning_rate = c.ranker_lr;
    opts.step.keep_all_updates = c.keep_all_updates;
    auto history = weaksup::run_selection(policy, instances, ranker, target, opts);

    ranker.save(ctx.work(artifact::kRanker));
    ctx.produced(artifact::kRanker);
    policy.save(ctx.work(artifact::kSelector));
    ctx.produced(artifact::kSelector);

    std::ostringstream log;
    log << "step\ttarget_ndcg@10\n";
    for (const auto& [step, ndcg] : history.checks) {
        log << step << '\t' << format_double(ndcg) << '\n';
    }
    write_text(ctx.work(artifact::kSelectLog), log.str());
    ctx.produced(artifact::kSelectLog);
    ctx.log("select-train: " + std::to_string(instances.size()) + " instances, target NDCG@10 " +
            format_double(target.ndcg(ranker)));
}

void stage_rerank(Context& ctx, std::uint64_t)
{
    const auto& c = ctx.config();
    rerank::FusionConfig fusion{rerank::FusionConfig::parse_strategy(c.fusion), c.alpha, c.rrf_k};
    auto queries = ctx.queries();
    auto index = sparse::InvertedIndex::load(ctx.artifact_input(artifact::kIndex, "index"));
    Run base = read_run_logged(ctx, ctx.artifact_input(artifact::kBm25Run, "index"));
    auto ranker = rerank::Ranker::load(ctx.artifact_input(artifact::kRanker, "select-train"));
    auto dense = DenseArtifacts::load(ctx);
    auto extractor = dense.extractor(index, bm25_params(c));

    Run dense_run;
    if (fusion.strategy != rerank::FusionStrategy::None) {
        dense_run = read_run_logged(ctx, ctx.artifact_input(artifact::kDenseRun, "train-dense"));
    }
    if (fusion.strategy == rerank::FusionStrategy::BaseUnion) {
        Run fused;
        for (const auto& q : queries) {
            fused.lists[q.query_id] = rerank::fuse_base_union(base.at(q.query_id), dense_run.at(q.query_id), c.topk,
                                                              c.rrf_k);
            fused.lists[q.query_id].query_id = q.query_id;
        }
        base = std::move(fused);
    }
    Run final_run = rerank::rerank_run(ranker, base, c.depth, extractor, queries, c.threads);
    if (fusion.strategy == rerank::FusionStrategy::Interpolate || fusion.strategy == rerank::FusionStrategy::Rrf) {
        for (auto& [qid, list] : final_run.lists) {
            if (fusion.strategy == rerank::FusionStrategy::Interpolate) {
                list = rerank::fuse_interpolate(list, dense_run.at(qid), c.alpha);
            } else {
                const RankedList lists[] = {list, dense_run.at(qid)};
                list = rerank::reciprocal_rank_fusion(lists, c.topk, c.rrf_k);
            }
            list.query_id = qid;
        }
    }
    final_run.tag = "cmt-" + c.fusion;
    eval::write_run(ctx.work(artifact::kFinalRun), final_run);
    ctx.produced(artifact::kFinalRun);
    ctx.log("rerank: depth " + std::to_string(c.depth) + ", fusion " + c.fusion);
}

void stage_evaluate(Context& ctx, std::uint64_t)
{
    const auto& c = ctx.config();
    auto qrels = ctx.qrels();
    eval::ReportOptions opts;
    opts.k = c.k;
    opts.gain = c.gain == "exp" ? eval::Gain::Exponential : eval::Gain::Linear;
    opts.skip_unjudgeable = c.skip_unjudgeable;

    std::optional<eval::QuerySplit> split;
    corpus::Qrels prior;
    if (c.residual) {
        prior = eval::read_qrels(ctx.input(c.prior_qrels, "prior-round qrels for --residual"));
        split = eval::QuerySplit::load(ctx.input(c.split_file, "old/new split file for --residual"));
    } else if (!c.split_file.empty()) {
        split = eval::QuerySplit::load(ctx.input(c.split_file, "old/new split file"));
    }

    std::string table, jsonl;
    std::size_t evaluated = 0;
    for (const char* name : {artifact::kBm25Run, artifact::kDenseRun, artifact::kFinalRun}) {
        if (!ctx.optional_input(ctx.work(name))) {
            continue;
        }
        Run run = read_run_logged(ctx, ctx.work(name));
        if (c.residual) {
            run = eval::residual_filter(run, prior, *split);
        }
        auto report = split ? eval::old_new_report(run, qrels, *split, opts) : eval::evaluate(run, qrels, opts);
        report.tag = name;
        table += "== " + std::string(name) + (c.residual ? " (residual)" : "") + " ==\n" + report.format_table() + '\n';
        jsonl += report.format_jsonl();
        ++evaluated;
        if (report.overall) {
            ctx.log("evaluate: " + std::string(name) + " NDCG@" + std::to_string(c.k) + " " +
                    format_double(report.overall->ndcg) + " P@5 " + format_double(report.overall->p5));
        }
    }
    if (evaluated == 0) {
        throw DependencyError(std::string("missing artifact ") + artifact::kBm25Run +
                              " (run the index stage first): nothing to evaluate");
    }
    write_text(ctx.work(artifact::kReportTable), table);
    ctx.produced(artifact::kReportTable);
    write_text(ctx.work(artifact::kReportJsonl), jsonl);
    ctx.produced(artifact::kReportJsonl);
}

void stage_depth_sweep(Context& ctx, std::uint64_t)
{
    const auto& c = ctx.config();
    auto queries = ctx.queries();
    auto index = sparse::InvertedIndex::load(ctx.artifact_input(artifact::kIndex, "index"));
    Run base = read_run_logged(ctx, ctx.artifact_input(artifact::kBm25Run, "index"));
    auto ranker = rerank::Ranker::load(ctx.artifact_input(artifact::kRanker, "select-train"));
    auto qrels = ctx.qrels();
    auto dense = DenseArtifacts::load(ctx);
    auto extractor = dense.extractor(index, bm25_params(c));
    auto rows = rerank::depth_sweep(ranker, base, c.sweep_depths, extractor, queries, qrels);
    std::ostringstream out;
    out << "depth\tndcg@10\tp@5\n";
    for (const auto& r : rows) {
        out << r.depth << '\t' << format_double(r.ndcg10) << '\t' << format_double(r.p5) << '\n';
    }
    write_text(ctx.work(artifact::kDepthSweep), out.str());
    ctx.produced(artifact::kDepthSweep);
}

Analysis analyze_with(Context& ctx)
{
    const auto& c = ctx.config();
    Analysis a;
    auto docs = ctx.docs();
    auto queries = ctx.queries();
    auto qrels = ctx.qrels();
    auto vocab = corpus::SubwordVocab::load(ctx.artifact_input(artifact::kVocab, "ingest"));
    Run base = read_run_logged(ctx, ctx.artifact_input(artifact::kBm25Run, "index"));

    a.documents = docs.size();
    a.queries = queries.size();
    a.judged_queries = qrels.judgments.size();
    a.judgments = qrels.size();
    for (const auto& [q, judged] : qrels.judgments) {
        for (const auto& [d, g] : judged) {
            a.relevant_judgments += g > 0 ? 1 : 0;
        }
    }
    if (ctx.optional_input(ctx.work(artifact::kWeak))) {
        a.weak_triples = count_lines(ctx.work(artifact::kWeak));
    }
    if (!c.external_weak.empty()) {
        a.external_triples = count_lines(ctx.input(c.external_weak, "external weak data"));
    }

    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (const auto& d : docs) {
        texts.push_back(d.text());
    }
    a.subword_ratio_domain = corpus::subword_ratio(texts, vocab);
    const auto& general = fixtures::general_texts();
    auto general_vocab = corpus::train_subword_vocab(general, c.vocab_size);
    a.subword_ratio_general = corpus::subword_ratio(texts, general_vocab);
    a.coverage_k = c.coverage_k;
    a.coverage = sparse::coverage_at_k(base, qrels, c.coverage_k);
    return a;
}

void stage_analyze(Context& ctx, std::uint64_t)
{
    auto a = analyze_with(ctx);
    nlohmann::ordered_json rec;
    rec["documents"] = a.documents;
    rec["queries"] = a.queries;
    rec["judged_queries"] = a.judged_queries;
    rec["judgments"] = a.judgments;
    rec["relevant_judgments"] = a.relevant_judgments;
    rec["weak_triples"] = a.weak_triples;
    rec["external_triples"] = a.external_triples;
    rec["subword_ratio_domain_vocab"] = a.subword_ratio_domain;
    rec["subword_ratio_general_vocab"] = a.subword_ratio_general;
    rec["coverage_k"] = a.coverage_k;
    rec["coverage"] = a.coverage;
    write_text(ctx.work(artifact::kAnalysis), rec.dump() + '\n');
    ctx.produced(artifact::kAnalysis);
    ctx.log("analyze: coverage@" + std::to_string(a.coverage_k) + " " + format_double(a.coverage) +
            ", subword ratio domain " + format_double(a.subword_ratio_domain) + " general " +
            format_double(a.subword_ratio_general));
}

using StageFn = void (*)(Context&, std::uint64_t);

StageFn stage_function(const std::string& stage)
{
    static const std::map<std::string, StageFn> fns{
        {"ingest", stage_ingest},           {"index", stage_index},
        {"dapt", stage_dapt},               {"train-dense", stage_train_dense},
        {"synth-weak", stage_synth_weak},   {"select-train", stage_select_train},
        {"rerank", stage_rerank},           {"evaluate", stage_evaluate},
        {"depth-sweep", stage_depth_sweep}, {"analyze", stage_analyze},
    };
    auto it = fns.find(stage);
    if (it == fns.end()) {
        throw ConfigError("unknown stage \"" + stage + "\"");
    }
    return it->second;
}

fs::path resolve(const fs::path& base, const std::string& value)
{
    if (value.empty()) {
        return {};
    }
    fs::path p(value);
    return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& value)
{
    auto size = [&](std::size_t& field) { field = parse_integer<std::size_t>(key, value); };
    auto real = [&](double& field) { field = parse_double(key, value); };
    auto flag = [&](bool& field) { field = parse_bool(key, value); };
    if (key == "corpus") corpus = value;
    else if (key == "queries") queries = value;
    else if (key == "qrels") qrels = value;
    else if (key == "prior_qrels") prior_qrels = value;
    else if (key == "split_file") split_file = value;
    else if (key == "stopwords") stopwords = value;
    else if (key == "external_weak") external_weak = value;
    else if (key == "work_dir") work_dir = value;
    else if (key == "seed") seed = parse_integer<std::uint64_t>(key, value);
    else if (key == "threads") threads = parse_integer<unsigned>(key, value);
    else if (key == "date_cutoff") date_cutoff = value;
    else if (key == "vocab_size") size(vocab_size);
    else if (key == "k1") real(k1);
    else if (key == "b") real(b);
    else if (key == "topk") size(topk);
    else if (key == "dim") size(dim);
    else if (key == "negatives") size(negatives);
    else if (key == "dense_epochs") size(dense_epochs);
    else if (key == "dense_batch") size(dense_batch);
    else if (key == "dense_lr") real(dense_lr);
    else if (key == "dapt_epochs") size(dapt_epochs);
    else if (key == "dapt_batch") size(dapt_batch);
    else if (key == "dapt_lr") real(dapt_lr);
    else if (key == "mask_rate") real(mask_rate);
    else if (key == "triples") size(triples);
    else if (key == "retrieval_depth") size(retrieval_depth);
    else if (key == "include_stage1") flag(include_stage1);
    else if (key == "policy_lr") real(policy_lr);
    else if (key == "ranker_lr") real(ranker_lr);
    else if (key == "select_steps") size(select_steps);
    else if (key == "select_batch") size(select_batch);
    else if (key == "eval_every_steps") size(eval_every_steps);
    else if (key == "keep_all_updates") flag(keep_all_updates);
    else if (key == "depth") size(depth);
    else if (key == "fusion") fusion = value;
    else if (key == "alpha") real(alpha);
    else if (key == "rrf_k") rrf_k = parse_integer<int>(key, value);
    else if (key == "sweep_depths") {
        sweep_depths.clear();
        std::istringstream in(value);
        std::string item;
        while (std::getline(in, item, ',')) {
            sweep_depths.push_back(parse_integer<std::size_t>(key, trim(item)));
        }
    }
    else if (key == "k") size(k);
    else if (key == "gain") gain = value;
    else if (key == "residual") flag(residual);
    else if (key == "skip_unjudgeable") flag(skip_unjudgeable);
    else if (key == "coverage_k") size(coverage_k);
    else throw ConfigError("unknown config key \"" + key + "\"");
}

void PipelineConfig::validate() const
{
    auto require = [](bool ok, const std::string& message) {
        if (!ok) {
            throw ConfigError(message);
        }
    };
    sparse::Bm25Params{k1, b}.validate();
    require(threads >= 1, "threads must be >= 1");
    require(date_cutoff.empty() || corpus::parse_date(date_cutoff).has_value(), "date_cutoff must be YYYY-MM-DD");
    require(vocab_size >= 3, "vocab_size must be >= 3");
    require(topk >= 1, "topk must be >= 1");
    require(dim >= 1, "dim must be >= 1");
    require(negatives >= 1, "negatives must be >= 1");
    require(dense_epochs >= 1 && dense_batch >= 1, "dense_epochs and dense_batch must be >= 1");
    require(dense_lr > 0.0, "dense_lr must be > 0");
    require(dapt_epochs >= 1 && dapt_batch >= 1, "dapt_epochs and dapt_batch must be >= 1");
    require(dapt_lr > 0.0, "dapt_lr must be > 0");
    require(mask_rate > 0.0 && mask_rate < 1.0, "mask_rate must be in (0, 1)");
    require(triples >= 1, "triples must be >= 1");
    require(retrieval_depth >= 2, "retrieval_depth must be >= 2");
    require(policy_lr > 0.0 && ranker_lr > 0.0, "policy_lr and ranker_lr must be > 0");
    require(select_steps >= 1 && select_batch >= 1, "select_steps and select_batch must be >= 1");
    require(depth >= 1, "depth must be >= 1");
    rerank::FusionConfig{rerank::FusionConfig::parse_strategy(fusion), alpha, rrf_k}.validate();
    require(!sweep_depths.empty() && std::find(sweep_depths.begin(), sweep_depths.end(), 0) == sweep_depths.end(),
            "sweep_depths must list depths >= 1");
    require(k >= 1, "k must be >= 1");
    require(gain == "linear" || gain == "exp", "gain must be linear or exp");
    require(coverage_k >= 1, "coverage_k must be >= 1");
}

std::vector<std::pair<std::string, std::string>> PipelineConfig::entries() const
{
    auto b2s = [](bool v) { return std::string(v ? "true" : "false"); };
    std::string depths;
    for (auto d : sweep_depths) {
        depths += (depths.empty() ? "" : ",") + std::to_string(d);
    }
    return {
        {"corpus", corpus.string()},
        {"queries", queries.string()},
        {"qrels", qrels.string()},
        {"prior_qrels", prior_qrels.string()},
        {"split_file", split_file.string()},
        {"stopwords", stopwords.string()},
        {"external_weak", external_weak.string()},
        {"work_dir", work_dir.string()},
        {"seed", std::to_string(seed)},
        {"threads", std::to_string(threads)},
        {"date_cutoff", date_cutoff},
        {"vocab_size", std::to_string(vocab_size)},
        {"k1", format_double(k1)},
        {"b", format_double(b)},
        {"topk", std::to_string(topk)},
        {"dim", std::to_string(dim)},
        {"negatives", std::to_string(negatives)},
        {"dense_epochs", std::to_string(dense_epochs)},
        {"dense_batch", std::to_string(dense_batch)},
        {"dense_lr", format_double(dense_lr)},
        {"dapt_epochs", std::to_string(dapt_epochs)},
        {"dapt_batch", std::to_string(dapt_batch)},
        {"dapt_lr", format_double(dapt_lr)},
        {"mask_rate", format_double(mask_rate)},
        {"triples", std::to_string(triples)},
        {"retrieval_depth", std::to_string(retrieval_depth)},
        {"include_stage1", b2s(include_stage1)},
        {"policy_lr", format_double(policy_lr)},
        {"ranker_lr", format_double(ranker_lr)},
        {"select_steps", std::to_string(select_steps)},
        {"select_batch", std::to_string(select_batch)},
        {"eval_every_steps", std::to_string(eval_every_steps)},
        {"keep_all_updates", b2s(keep_all_updates)},
        {"depth", std::to_string(depth)},
        {"fusion", fusion},
        {"alpha", format_double(alpha)},
        {"rrf_k", std::to_string(rrf_k)},
        {"sweep_depths", depths},
        {"k", std::to_string(k)},
        {"gain", gain},
        {"residual", b2s(residual)},
        {"skip_unjudgeable", b2s(skip_unjudgeable)},
        {"coverage_k", std::to_string(coverage_k)},
    };
}

std::string PipelineConfig::to_text() const
{
    std::string out;
    for (const auto& [key, value] : entries()) {
        out += key + " = " + value + '\n';
    }
    return out;
}

PipelineConfig PipelineConfig::load(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config: " + path.string());
    }
    const fs::path base = path.parent_path();
    PipelineConfig config;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            config.set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        static const std::set<std::string> path_keys{"corpus",    "queries",   "qrels",         "prior_qrels",
                                                     "split_file", "stopwords", "external_weak", "work_dir"};
        if (path_keys.contains(key)) {
            config.set(key, resolve(base, value).string());
        }
    }
    return config;
}

std::string file_hash(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DependencyError("cannot open: " + path.string());
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

std::vector<StageRecord> run_pipeline(const PipelineConfig& config, const std::vector<std::string>& stages,
                                      const std::function<void(const std::string&)>& log)
{
    config.validate();
    std::set<std::string> requested;
    for (const auto& s : stages) {
        stage_function(s);
        requested.insert(s);
    }
    DirectoryLock lock(config.work_dir);
    Context ctx(config, log);
    std::vector<StageRecord> records;
    for (const auto& stage : all_stages()) {
        if (!requested.contains(stage)) {
            continue;
        }
        const auto seed = stage_seed(config.seed, stage);
        ctx.begin_stage(stage);
        const auto start = std::chrono::steady_clock::now();
        stage_function(stage)(ctx, seed);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        records.push_back(ctx.end_stage(seed, seconds));
    }
    return records;
}

Analysis analyze(const PipelineConfig& config)
{
    config.validate();
    std::function<void(const std::string&)> quiet;
    Context ctx(config, quiet);
    ctx.begin_stage("analyze");
    return analyze_with(ctx);
}

int exit_code_for_current_exception()
{
    try {
        throw;
    } catch (const ConfigError&) {
        return 2;
    } catch (const DependencyError&) {
        return 3;
    } catch (const NumericError&) {
        return 4;
    } catch (...) {
        return 1;
    }
}

}  // namespace cmt::pipeline
