#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmt/dense.hpp"
#include "cmt/random.hpp"
#include "cmt/subword.hpp"

namespace cmt::dapt {

using corpus::PieceId;
using dense::Matrix;
using dense::Vector;

inline constexpr double kDefaultMaskRate = 0.15;

/// round(rate * n), at least 1 for non-empty input.
std::size_t mask_count(std::size_t n, double rate);

struct MaskedSequence {
    std::vector<PieceId> ids;
    /// Ascending, distinct.
    std::vector<std::size_t> positions;
    /// Original id at each masked position, parallel to `positions`.
    std::vector<PieceId> originals;
};

/// Replaces mask_count(n, rate) uniformly chosen positions with the MASK
/// piece. Throws ConfigError unless 0 < rate < 1; an empty input gives an
/// empty result.
MaskedSequence mask_tokens(std::span<const PieceId> ids, double rate, Rng& rng);
MaskedSequence mask_tokens(std::span<const PieceId> ids, double rate, std::uint64_t seed);

struct MaskTarget {
    std::size_t sequence = 0;
    std::size_t position = 0;
    PieceId original = 0;
};

struct MaskedBatch {
    std::vector<std::vector<PieceId>> sequences;
    std::vector<MaskTarget> targets;
    /// Empty inputs dropped with a warning.
    std::size_t skipped_empty = 0;
};

MaskedBatch make_masked_batch(std::span<const std::vector<PieceId>> sequences, double rate, Rng& rng);

/// Predicts each masked piece from the mean embedding of the unmasked
/// positions in its sequence (the MASK row when every position is masked),
/// through a full softmax over the vocabulary.
class MlmModel {
  public:
    /// Embeddings use the dense encoder's init; output weights and bias start
    /// at zero so the initial prediction is uniform.
    MlmModel(std::size_t vocab_size, std::size_t dim, std::uint64_t seed);
    /// Continues from an existing embedding table.
    explicit MlmModel(Matrix embeddings);

    std::size_t vocab_size() const { return static_cast<std::size_t>(embeddings.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(embeddings.cols()); }

    Matrix embeddings;
    Matrix output;
    Vector bias;
};

/// Context vector for one target.
Vector mlm_context(const MlmModel& model, const MaskedBatch& batch, const MaskTarget& target);

/// Softmax over the vocabulary for one target.
std::vector<double> mlm_probabilities(const MlmModel& model, const MaskedBatch& batch, const MaskTarget& target);

struct MlmGradient {
    double loss = 0.0;
    Matrix embeddings;
    Matrix output;
    Vector bias;
};

/// Mean cross-entropy over the batch's targets and its analytic gradient.
MlmGradient mlm_loss_gradient(const MlmModel& model, const MaskedBatch& batch);

/// One descent step; returns the mean loss before the step. Throws
/// NumericError on a non-finite loss or gradient.
double mlm_train_step(MlmModel& model, const MaskedBatch& batch, double learning_rate);

struct PretrainOptions {
    std::size_t epochs = 5;
    std::size_t batch_size = 16;
    double learning_rate = 0.5;
    double mask_rate = kDefaultMaskRate;
    std::uint64_t seed = 0;
};

/// Re-masks every sequence each epoch; returns mean loss per epoch.
std::vector<double> pretrain(MlmModel& model, std::span<const std::vector<PieceId>> sequences,
                             const PretrainOptions& options);

/// Copy of `encoder` whose table is replaced by `pretrained`. Throws
/// InvalidInput when the shapes differ.
dense::DenseEncoder warm_start(const dense::DenseEncoder& encoder, const Matrix& pretrained);

}  // namespace cmt::dapt
