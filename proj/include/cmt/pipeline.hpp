#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cmt::pipeline {

/// Every setting of a pipeline run. Loaded from a flat `key = value` file;
/// command-line flags override individual keys.
struct PipelineConfig {
    // Inputs. Relative paths resolve against the config file's directory.
    std::filesystem::path corpus;
    std::filesystem::path queries;
    std::filesystem::path qrels;
    std::filesystem::path prior_qrels;
    std::filesystem::path split_file;
    std::filesystem::path stopwords;
    std::filesystem::path external_weak;
    /// Directory that receives every artifact.
    std::filesystem::path work_dir = "work";

    std::uint64_t seed = 42;
    unsigned threads = 1;
    /// Documents dated before this (YYYY-MM-DD) are dropped at ingest; empty keeps all.
    std::string date_cutoff;

    std::size_t vocab_size = 2000;

    double k1 = 0.9;
    double b = 0.4;
    std::size_t topk = 100;

    std::size_t dim = 64;
    std::size_t negatives = 4;
    std::size_t dense_epochs = 200;
    std::size_t dense_batch = 8;
    double dense_lr = 0.05;

    std::size_t dapt_epochs = 5;
    std::size_t dapt_batch = 16;
    double dapt_lr = 0.5;
    double mask_rate = 0.15;

    std::size_t triples = 200;
    std::size_t retrieval_depth = 20;
    bool include_stage1 = false;

    double policy_lr = 0.05;
    double ranker_lr = 0.05;
    std::size_t select_steps = 300;
    std::size_t select_batch = 16;
    std::size_t eval_every_steps = 3;
    bool keep_all_updates = false;

    std::size_t depth = 100;
    std::string fusion = "none";
    double alpha = 0.5;
    int rrf_k = 60;
    std::vector<std::size_t> sweep_depths{10, 20, 50, 100};

    std::size_t k = 10;
    std::string gain = "linear";
    bool residual = false;
    bool skip_unjudgeable = false;
    std::size_t coverage_k = 100;

    /// Sets one key from its text form. Throws ConfigError for an unknown key
    /// or a malformed value.
    void set(const std::string& key, const std::string& value);
    /// Throws ConfigError when a hyperparameter is out of range.
    void validate() const;
    /// Every key with its current value, in a stable order.
    std::vector<std::pair<std::string, std::string>> entries() const;
    std::string to_text() const;

    static PipelineConfig load(const std::filesystem::path& path);
};

inline const std::vector<std::string>& all_stages()
{
    static const std::vector<std::string> stages{"ingest",    "index",       "dapt",   "train-dense", "synth-weak",
                                                 "select-train", "rerank", "evaluate", "depth-sweep", "analyze"};
    return stages;
}

/// Artifact file names inside the work directory.
namespace artifact {
inline constexpr const char* kCorpus = "corpus.jsonl";
inline constexpr const char* kQueries = "queries.tsv";
inline constexpr const char* kVocab = "vocab.bpe";
inline constexpr const char* kIngestReport = "ingest.txt";
inline constexpr const char* kIndex = "index.bin";
inline constexpr const char* kBm25Run = "bm25.run";
inline constexpr const char* kMlm = "mlm.ckpt";
inline constexpr const char* kEncoder = "encoder.ckpt";
inline constexpr const char* kDenseIndex = "dense.idx";
inline constexpr const char* kDenseRun = "dense.run";
inline constexpr const char* kWeak = "weak.jsonl";
inline constexpr const char* kRanker = "ranker.ckpt";
inline constexpr const char* kSelector = "selector.ckpt";
inline constexpr const char* kSelectLog = "select.tsv";
inline constexpr const char* kFinalRun = "final.run";
inline constexpr const char* kReportTable = "report.txt";
inline constexpr const char* kReportJsonl = "report.jsonl";
inline constexpr const char* kDepthSweep = "depth_sweep.tsv";
inline constexpr const char* kAnalysis = "analysis.jsonl";
inline constexpr const char* kManifest = "manifest.tsv";
inline constexpr const char* kLock = ".lock";
}  // namespace artifact

struct StageRecord {
    std::string stage;
    double wall_seconds = 0.0;
    std::vector<std::string> artifacts;
};

/// Runs `stages` in pipeline order, whatever order they are given in. Each
/// stage reads its inputs from files and writes its artifacts plus one
/// manifest line per artifact. Errors propagate as cmt exceptions; the lock
/// file is always released.
std::vector<StageRecord> run_pipeline(const PipelineConfig& config, const std::vector<std::string>& stages,
                                      const std::function<void(const std::string&)>& log = {});

/// Domain-gap measurements written by the analyze stage.
struct Analysis {
    std::size_t documents = 0;
    std::size_t queries = 0;
    std::size_t judged_queries = 0;
    std::size_t judgments = 0;
    std::size_t relevant_judgments = 0;
    std::size_t weak_triples = 0;
    std::size_t external_triples = 0;
    double subword_ratio_domain = 0.0;
    double subword_ratio_general = 0.0;
    std::size_t coverage_k = 0;
    double coverage = 0.0;
};

Analysis analyze(const PipelineConfig& config);

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

/// Maps the cmt exception hierarchy onto process exit codes: 2 config,
/// 3 missing dependency, 4 numeric failure, 1 anything else.
int exit_code_for_current_exception();

}  // namespace cmt::pipeline
