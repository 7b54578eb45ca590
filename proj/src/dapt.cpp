#include "cmt/dapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmt/error.hpp"

namespace cmt::dapt {

std::size_t mask_count(std::size_t n, double rate)
{
    if (n == 0) {
        return 0;
    }
    auto count = static_cast<std::size_t>(std::lround(rate * static_cast<double>(n)));
    return std::clamp<std::size_t>(count, 1, n);
}

MaskedSequence mask_tokens(std::span<const PieceId> ids, double rate, Rng& rng)
{
    if (!(rate > 0.0 && rate < 1.0)) {
        throw ConfigError("mask rate must lie strictly between 0 and 1");
    }
    MaskedSequence out;
    out.ids.assign(ids.begin(), ids.end());
    const std::size_t n = ids.size();
    const std::size_t count = mask_count(n, rate);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    // Partial Fisher-Yates: the first `count` slots are a uniform sample.
    for (std::size_t i = 0; i < count; ++i) {
        std::swap(perm[i], perm[i + rng.below(n - i)]);
    }
    out.positions.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(out.positions.begin(), out.positions.end());
    for (auto p : out.positions) {
        out.originals.push_back(out.ids[p]);
        out.ids[p] = corpus::SubwordVocab::kMask;
    }
    return out;
}

MaskedSequence mask_tokens(std::span<const PieceId> ids, double rate, std::uint64_t seed)
{
    Rng rng(seed);
    return mask_tokens(ids, rate, rng);
}

MaskedBatch make_masked_batch(std::span<const std::vector<PieceId>> sequences, double rate, Rng& rng)
{
    MaskedBatch batch;
    for (const auto& seq : sequences) {
        if (seq.empty()) {
            ++batch.skipped_empty;
            continue;
        }
        auto masked = mask_tokens(seq, rate, rng);
        const std::size_t s = batch.sequences.size();
        for (std::size_t i = 0; i < masked.positions.size(); ++i) {
            batch.targets.push_back({s, masked.positions[i], masked.originals[i]});
        }
        batch.sequences.push_back(std::move(masked.ids));
    }
    return batch;
}

MlmModel::MlmModel(std::size_t vocab_size, std::size_t dim, std::uint64_t seed)
    : MlmModel(dense::DenseEncoder(vocab_size, dim, seed).table())
{}

MlmModel::MlmModel(Matrix emb)
    : embeddings(std::move(emb)), output(Matrix::Zero(embeddings.rows(), embeddings.cols())),
      bias(Vector::Zero(embeddings.rows()))
{}

namespace {

/// Rows averaged into a target's context.
std::vector<PieceId> context_rows(const MaskedBatch& batch, const MaskTarget& target)
{
    const auto& seq = batch.sequences.at(target.sequence);
    std::vector<PieceId> rows;
    for (auto id : seq) {
        if (id != corpus::SubwordVocab::kMask) {
            rows.push_back(id);
        }
    }
    if (rows.empty()) {
        rows.push_back(corpus::SubwordVocab::kMask);
    }
    return rows;
}

Vector logits(const MlmModel& model, const Vector& context) { return model.output * context + model.bias; }

}  // namespace

Vector mlm_context(const MlmModel& model, const MaskedBatch& batch, const MaskTarget& target)
{
    auto rows = context_rows(batch, target);
    Vector h = Vector::Zero(model.embeddings.cols());
    for (auto r : rows) {
        h += model.embeddings.row(r).transpose();
    }
    return h / static_cast<double>(rows.size());
}

std::vector<double> mlm_probabilities(const MlmModel& model, const MaskedBatch& batch, const MaskTarget& target)
{
    Vector z = logits(model, mlm_context(model, batch, target));
    return dense::softmax(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
}

MlmGradient mlm_loss_gradient(const MlmModel& model, const MaskedBatch& batch)
{
    if (batch.targets.empty()) {
        throw InvalidInput("masked batch has no targets");
    }
    MlmGradient g{0.0, Matrix::Zero(model.embeddings.rows(), model.embeddings.cols()),
                  Matrix::Zero(model.output.rows(), model.output.cols()), Vector::Zero(model.bias.size())};
    for (const auto& t : batch.targets) {
        auto rows = context_rows(batch, t);
        Vector h = Vector::Zero(model.embeddings.cols());
        for (auto r : rows) {
            h += model.embeddings.row(r).transpose();
        }
        h /= static_cast<double>(rows.size());
        Vector z = logits(model, h);
        const double shift = z.maxCoeff();
        Vector p = (z.array() - shift).exp().matrix();
        const double norm = p.sum();
        p /= norm;
        g.loss += shift + std::log(norm) - z[t.original];

        p[t.original] -= 1.0;  // d loss / d logits
        g.output += p * h.transpose();
        g.bias += p;
        const Vector dh = model.output.transpose() * p / static_cast<double>(rows.size());
        for (auto r : rows) {
            g.embeddings.row(r) += dh.transpose();
        }
    }
    const double n = static_cast<double>(batch.targets.size());
    g.loss /= n;
    g.embeddings /= n;
    g.output /= n;
    g.bias /= n;
    return g;
}

double mlm_train_step(MlmModel& model, const MaskedBatch& batch, double learning_rate)
{
    auto g = mlm_loss_gradient(model, batch);
    if (!std::isfinite(g.loss) || !g.embeddings.allFinite() || !g.output.allFinite() || !g.bias.allFinite()) {
        throw NumericError("non-finite MLM loss or gradient");
    }
    if (learning_rate != 0.0) {
        model.embeddings -= learning_rate * g.embeddings;
        model.output -= learning_rate * g.output;
        model.bias -= learning_rate * g.bias;
    }
    return g.loss;
}

std::vector<double> pretrain(MlmModel& model, std::span<const std::vector<PieceId>> sequences,
                             const PretrainOptions& options)
{
    if (options.batch_size == 0) {
        throw ConfigError("batch size must be positive");
    }
    Rng rng(options.seed);
    std::vector<std::size_t> order(sequences.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> losses;
    std::vector<std::vector<PieceId>> chunk;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        double total = 0.0;
        std::size_t targets = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            chunk.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + options.batch_size); ++i) {
                chunk.push_back(sequences[order[i]]);
            }
            auto batch = make_masked_batch(chunk, options.mask_rate, rng);
            if (batch.targets.empty()) {
                continue;
            }
            total += mlm_train_step(model, batch, options.learning_rate) * static_cast<double>(batch.targets.size());
            targets += batch.targets.size();
        }
        losses.push_back(targets == 0 ? 0.0 : total / static_cast<double>(targets));
    }
    return losses;
}

dense::DenseEncoder warm_start(const dense::DenseEncoder& encoder, const Matrix& pretrained)
{
    if (pretrained.rows() != encoder.table().rows() || pretrained.cols() != encoder.table().cols()) {
        throw InvalidInput("pretrained embeddings are " + std::to_string(pretrained.rows()) + "x" +
                           std::to_string(pretrained.cols()) + ", encoder expects " +
                           std::to_string(encoder.vocab_size()) + "x" + std::to_string(encoder.dim()));
    }
    return dense::DenseEncoder(pretrained);
}

}  // namespace cmt::dapt
