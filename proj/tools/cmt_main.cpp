#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "cmt/error.hpp"
#include "cmt/fixtures.hpp"
#include "cmt/pipeline.hpp"
#include "cmt/weaksup.hpp"

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

enum class Kind { Value, Flag };

struct FlagSpec {
    const char* flag;
    const char* key;
    const char* help;
    Kind kind = Kind::Value;
};

const std::vector<FlagSpec> kCommonFlags{
    {"--seed", "seed", "master random seed"},
    {"--threads", "threads", "worker threads for search and reranking"},
    {"--work-dir", "work_dir", "artifact directory"},
    {"--corpus", "corpus", "corpus JSONL file"},
    {"--queries", "queries", "queries TSV file"},
    {"--qrels", "qrels", "qrels file"},
    {"--prior-qrels", "prior_qrels", "qrels of earlier rounds"},
    {"--stopwords", "stopwords", "stopword list, one word per line"},
    {"--external-weak", "external_weak", "external weak-supervision triples (JSONL)"},
};

void add_flags(CLI::App* cmd, const std::vector<FlagSpec>& specs, Overrides& overrides)
{
    for (const auto& s : specs) {
        const std::string key = s.key;
        if (s.kind == Kind::Flag) {
            cmd->add_flag_callback(s.flag, [&overrides, key] { overrides.emplace_back(key, "true"); }, s.help);
        } else {
            cmd->add_option_function<std::string>(
                s.flag, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); }, s.help);
        }
    }
}

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

void write_fixture(const std::filesystem::path& dir, std::uint64_t seed)
{
    cmt::fixtures::TopicFixtureOptions opts;
    opts.seed = seed;
    auto fx = cmt::fixtures::topic_fixture(opts);
    cmt::fixtures::write_topic_fixture(fx, dir);
    auto external = cmt::fixtures::selection_triples(fx, 40, 10, seed + 1);
    cmt::weaksup::write_triples(dir / "external_weak.jsonl", external.triples);
    std::ofstream conf(dir / "pipeline.conf");
    conf << "# Synthetic 10-topic fixture.\n"
         << "corpus = corpus.jsonl\n"
         << "queries = queries.tsv\n"
         << "qrels = qrels.txt\n"
         << "prior_qrels = prior_qrels.txt\n"
         << "split_file = split.txt\n"
         << "work_dir = work\n"
         << "seed = " << seed << '\n'
         << "external_weak = external_weak.jsonl\n"
         << "# date_cutoff = 2020-01-01\n"
         << "dense_lr = 1.0\n"
         << "dense_epochs = 50\n"
         << "dapt_epochs = 3\n"
         << "triples = 150\n"
         << "select_steps = 150\n";
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Two-stage retrieval pipeline: BM25, dense retrieval, weak supervision, reranking, evaluation"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides overrides;
    std::vector<std::string> sets;
    bool quiet = false;
    std::string stage_list;
    std::string fixture_dir;
    std::uint64_t fixture_seed = 2020;

    const std::vector<std::pair<std::string, std::vector<FlagSpec>>> stage_flags{
        {"ingest", {{"--date-cutoff", "date_cutoff", "drop documents dated before YYYY-MM-DD"},
                    {"--vocab-size", "vocab_size", "subword vocabulary size"}}},
        {"index", {{"--k1", "k1", "BM25 k1"}, {"--b", "b", "BM25 b"}, {"--topk", "topk", "retrieval depth"}}},
        {"dapt", {{"--mask-rate", "mask_rate", "fraction of pieces masked"},
                  {"--epochs", "dapt_epochs", "pretraining epochs"},
                  {"--lr", "dapt_lr", "learning rate"},
                  {"--dim", "dim", "embedding dimension"}}},
        {"train-dense", {{"--dim", "dim", "embedding dimension"},
                         {"--negatives", "negatives", "negatives per training pair"},
                         {"--epochs", "dense_epochs", "training epochs"},
                         {"--lr", "dense_lr", "learning rate"},
                         {"--topk", "topk", "dense run depth"}}},
        {"synth-weak", {{"--triples", "triples", "pipeline triples to synthesize"},
                        {"--retrieval-depth", "retrieval_depth", "stage-1 BM25 depth R"},
                        {"--include-stage1", "include_stage1", "also emit stage-1 query triples", Kind::Flag}}},
        {"select-train", {{"--policy-lr", "policy_lr", "selector learning rate"},
                          {"--ranker-lr", "ranker_lr", "ranker learning rate"},
                          {"--steps", "select_steps", "selection steps"},
                          {"--batch", "select_batch", "instances per step"},
                          {"--eval-every", "eval_every_steps", "steps between target NDCG checks"},
                          {"--depth", "depth", "reranking depth on the target set"},
                          {"--keep-all-updates", "keep_all_updates", "keep ranker updates with negative reward",
                           Kind::Flag}}},
        {"rerank", {{"--depth", "depth", "reranking depth"},
                    {"--fusion", "fusion", "none, interp, union or rrf"},
                    {"--alpha", "alpha", "dense weight for interp fusion"},
                    {"--rrf-k", "rrf_k", "RRF rank offset"},
                    {"--topk", "topk", "fused list depth"}}},
        {"evaluate", {{"--k", "k", "metric cutoff"},
                      {"--gain", "gain", "linear or exp"},
                      {"--residual", "residual", "residual-collection evaluation", Kind::Flag},
                      {"--split-file", "split_file", "old/new query split"},
                      {"--skip-unjudgeable", "skip_unjudgeable", "leave queries without relevant docs out",
                       Kind::Flag}}},
        {"depth-sweep", {{"--depths", "sweep_depths", "comma-separated depths"}}},
        {"analyze", {{"--coverage-k", "coverage_k", "cutoff for coverage"}}},
    };

    std::vector<std::pair<CLI::App*, std::vector<std::string>>> commands;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "flat key = value config file");
        cmd->add_option("--set", sets, "override any config key, KEY=VALUE");
        cmd->add_flag("--quiet", quiet, "suppress progress messages");
        add_flags(cmd, kCommonFlags, overrides);
    };
    for (const auto& [stage, flags] : stage_flags) {
        auto* cmd = app.add_subcommand(stage, "run the " + stage + " stage");
        add_common(cmd);
        add_flags(cmd, flags, overrides);
        commands.push_back({cmd, {stage}});
    }

    auto* run = app.add_subcommand("run", "run several stages in pipeline order");
    add_common(run);
    run->add_option("--stages", stage_list, "comma-separated stages (default: all)");
    add_flags(run,
              {{"--k1", "k1", "BM25 k1"},
               {"--b", "b", "BM25 b"},
               {"--topk", "topk", "retrieval depth"},
               {"--dim", "dim", "embedding dimension"},
               {"--negatives", "negatives", "negatives per training pair"},
               {"--dense-epochs", "dense_epochs", "dense training epochs"},
               {"--dapt-epochs", "dapt_epochs", "pretraining epochs"},
               {"--mask-rate", "mask_rate", "fraction of pieces masked"},
               {"--triples", "triples", "pipeline triples to synthesize"},
               {"--retrieval-depth", "retrieval_depth", "stage-1 BM25 depth R"},
               {"--policy-lr", "policy_lr", "selector learning rate"},
               {"--depth", "depth", "reranking depth"},
               {"--fusion", "fusion", "none, interp, union or rrf"},
               {"--alpha", "alpha", "dense weight for interp fusion"},
               {"--rrf-k", "rrf_k", "RRF rank offset"},
               {"--k", "k", "metric cutoff"},
               {"--gain", "gain", "linear or exp"},
               {"--split-file", "split_file", "old/new query split"},
               {"--residual", "residual", "residual-collection evaluation", Kind::Flag},
               {"--keep-all-updates", "keep_all_updates", "keep ranker updates with negative reward", Kind::Flag},
               {"--include-stage1", "include_stage1", "also emit stage-1 query triples", Kind::Flag},
               {"--skip-unjudgeable", "skip_unjudgeable", "leave queries without relevant docs out", Kind::Flag}},
              overrides);

    auto* show = app.add_subcommand("config", "print the effective configuration");
    add_common(show);

    auto* fixture = app.add_subcommand("make-fixture", "write the synthetic fixture corpus and a config for it");
    fixture->add_option("--out", fixture_dir, "output directory")->required();
    fixture->add_option("--seed", fixture_seed, "fixture seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (fixture->parsed()) {
            write_fixture(fixture_dir, fixture_seed);
            std::cout << "fixture written to " << fixture_dir << '\n';
            return 0;
        }
        auto config = config_path.empty() ? cmt::pipeline::PipelineConfig{}
                                          : cmt::pipeline::PipelineConfig::load(config_path);
        for (const auto& [key, value] : overrides) {
            config.set(key, value);
        }
        for (const auto& kv : sets) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) {
                throw cmt::ConfigError("--set expects KEY=VALUE, got \"" + kv + "\"");
            }
            config.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (show->parsed()) {
            config.validate();
            std::cout << config.to_text();
            return 0;
        }
        std::vector<std::string> stages;
        if (run->parsed()) {
            stages = stage_list.empty() ? cmt::pipeline::all_stages() : split_list(stage_list);
        } else {
            for (const auto& [cmd, names] : commands) {
                if (cmd->parsed()) {
                    stages = names;
                }
            }
        }
        auto log = [quiet](const std::string& line) {
            if (!quiet) {
                std::cerr << line << '\n';
            }
        };
        auto records = cmt::pipeline::run_pipeline(config, stages, log);
        for (const auto& r : records) {
            std::string artifacts;
            for (const auto& a : r.artifacts) {
                artifacts += (artifacts.empty() ? "" : ", ") + a;
            }
            if (!quiet) {
                std::fprintf(stderr, "%-13s %7.2fs  %s\n", r.stage.c_str(), r.wall_seconds, artifacts.c_str());
            }
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cmt::pipeline::exit_code_for_current_exception();
    }
}
