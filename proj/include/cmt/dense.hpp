#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cmt/corpus.hpp"
#include "cmt/ranked_list.hpp"
#include "cmt/subword.hpp"

namespace cmt::sparse {
class InvertedIndex;
}

namespace cmt::dense {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using corpus::PieceId;

inline constexpr std::size_t kDefaultDim = 64;

/// Mean-pooled embedding table: E(text) is the average of its piece rows.
class DenseEncoder {
  public:
    /// Uniform init in [-0.5/dim, 0.5/dim].
    DenseEncoder(std::size_t vocab_size, std::size_t dim, std::uint64_t seed);
    explicit DenseEncoder(Matrix table);

    std::size_t vocab_size() const { return static_cast<std::size_t>(table_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(table_.cols()); }
    const Matrix& table() const { return table_; }
    Matrix& table() { return table_; }

    struct Encoded {
        Vector vector;
        /// Input had no pieces; `vector` is zero.
        bool empty = false;
    };

    Encoded encode_checked(std::span<const PieceId> ids) const;
    Vector encode(std::span<const PieceId> ids) const { return encode_checked(ids).vector; }

    bool finite() const { return table_.allFinite(); }

    /// Header: magic, version, dim, vocab size; then the row-major table.
    void save(const std::filesystem::path& path) const;
    static DenseEncoder load(const std::filesystem::path& path);

  private:
    Matrix table_;
};

/// Dot product. Throws InvalidInput on a dimension mismatch.
double similarity(const Vector& query, const Vector& doc);

/// Training instance over document ids.
struct TrainingTriple {
    std::string query;
    std::string positive;
    std::vector<std::string> negatives;

    /// Throws InvalidInput unless there is at least one negative and the
    /// positive is not among them.
    void validate() const;
};

/// The same instance with every text already tokenized.
struct EncodedTriple {
    std::vector<PieceId> query;
    std::vector<PieceId> positive;
    std::vector<std::vector<PieceId>> negatives;
};

/// Max-shifted softmax.
std::vector<double> softmax(std::span<const double> logits);

/// Query similarity to the positive (index 0) and then each negative.
std::vector<double> triple_similarities(const DenseEncoder& encoder, const EncodedTriple& triple);

/// -log(e^{s+} / (e^{s+} + sum_j e^{s-_j})). Throws NumericError on a
/// non-finite similarity.
double contrastive_loss(const DenseEncoder& encoder, const EncodedTriple& triple);

struct LossGradient {
    double loss = 0.0;
    Matrix gradient;
};

/// Mean loss over the batch and its analytic gradient w.r.t. the table.
LossGradient contrastive_loss_gradient(const DenseEncoder& encoder, std::span<const EncodedTriple> batch);

/// One gradient-descent step. Returns the batch's mean loss before the step.
double train_step(DenseEncoder& encoder, std::span<const EncodedTriple> batch, double learning_rate);

struct TrainOptions {
    std::size_t epochs = 200;
    std::size_t batch_size = 8;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
};

/// Shuffled mini-batch training; returns the mean loss of each epoch.
std::vector<double> train(DenseEncoder& encoder, std::span<const EncodedTriple> triples,
                          const TrainOptions& options);

/// Tokenizes query text and document texts (looked up by id in `docs`).
std::vector<EncodedTriple> encode_triples(std::span<const TrainingTriple> triples,
                                          const std::vector<corpus::Document>& docs,
                                          const corpus::SubwordVocab& vocab,
                                          std::size_t max_length = corpus::kDefaultMaxSequenceLength);

/// Builds (query, relevant doc, m negatives) instances from judged queries.
/// Negatives come from the BM25 top `depth` non-relevant docs, topped up with
/// random non-relevant docs when BM25 supplies fewer than m.
std::vector<TrainingTriple> sample_training_triples(const std::vector<corpus::Query>& queries,
                                                    const corpus::Qrels& qrels, const sparse::InvertedIndex& index,
                                                    std::size_t negatives, std::size_t depth, std::uint64_t seed);

struct DenseIndex {
    Matrix vectors;
    std::vector<std::string> doc_ids;

    std::size_t doc_count() const { return doc_ids.size(); }
    void save(const std::filesystem::path& path) const;
    static DenseIndex load(const std::filesystem::path& path);
};

DenseIndex build_dense_index(const DenseEncoder& encoder, const std::vector<corpus::Document>& docs,
                             const corpus::SubwordVocab& vocab,
                             std::size_t max_length = corpus::kDefaultMaxSequenceLength);

/// Exact top-k by dot product over every stored vector.
RankedList dense_search_topk(const DenseIndex& index, const Vector& query_vector, corpus::QueryId query_id,
                             std::size_t k);

RankedList dense_search_topk(const DenseIndex& index, const DenseEncoder& encoder, std::span<const PieceId> query,
                             corpus::QueryId query_id, std::size_t k);

}  // namespace cmt::dense
