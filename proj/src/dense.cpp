#include "cmt/dense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <unordered_map>
#include <unordered_set>

#include "cmt/binary_io.hpp"
#include "cmt/error.hpp"
#include "cmt/random.hpp"
#include "cmt/sparse.hpp"

namespace cmt::dense {

namespace {

constexpr std::string_view kEncoderMagic = "CMTDENSE";
constexpr std::string_view kIndexMagic = "CMTDIDX1";
constexpr std::uint32_t kVersion = 1;

void add_pooled_gradient(Matrix& grad, std::span<const PieceId> ids, const Vector& upstream)
{
    if (ids.empty()) {
        return;
    }
    const double scale = 1.0 / static_cast<double>(ids.size());
    for (auto id : ids) {
        grad.row(id) += scale * upstream.transpose();
    }
}

std::string join(const std::vector<std::string>& terms)
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

}  // namespace

DenseEncoder::DenseEncoder(std::size_t vocab_size, std::size_t dim, std::uint64_t seed)
    : table_(static_cast<Eigen::Index>(vocab_size), static_cast<Eigen::Index>(dim))
{
    if (dim == 0 || vocab_size == 0) {
        throw ConfigError("encoder dim and vocab size must be positive");
    }
    Rng rng(seed);
    const double bound = 0.5 / static_cast<double>(dim);
    for (Eigen::Index r = 0; r < table_.rows(); ++r) {
        for (Eigen::Index c = 0; c < table_.cols(); ++c) {
            table_(r, c) = rng.uniform(-bound, bound);
        }
    }
}

DenseEncoder::DenseEncoder(Matrix table) : table_(std::move(table))
{
    if (table_.rows() == 0 || table_.cols() == 0) {
        throw ConfigError("encoder table must be non-empty");
    }
}

DenseEncoder::Encoded DenseEncoder::encode_checked(std::span<const PieceId> ids) const
{
    Encoded out{Vector::Zero(table_.cols()), ids.empty()};
    for (auto id : ids) {
        if (id < 0 || id >= table_.rows()) {
            throw InvalidInput("piece id " + std::to_string(id) + " outside encoder vocab");
        }
        out.vector += table_.row(id).transpose();
    }
    if (!ids.empty()) {
        out.vector /= static_cast<double>(ids.size());
    }
    return out;
}

void DenseEncoder::save(const std::filesystem::path& path) const
{
    io::BinaryWriter out(path);
    out.magic(kEncoderMagic);
    out.put(kVersion);
    out.put<std::uint64_t>(dim());
    out.put<std::uint64_t>(vocab_size());
    out.put_array(table_.data(), static_cast<std::size_t>(table_.size()));
    out.finish();
}

DenseEncoder DenseEncoder::load(const std::filesystem::path& path)
{
    io::BinaryReader in(path);
    in.expect_magic(kEncoderMagic);
    if (in.get<std::uint32_t>() != kVersion) {
        throw ParseError(path.string() + ": unsupported encoder version");
    }
    auto dim = in.get<std::uint64_t>();
    auto vocab = in.get<std::uint64_t>();
    if (dim == 0 || vocab == 0) {
        throw ParseError(path.string() + ": empty encoder");
    }
    Matrix table(static_cast<Eigen::Index>(vocab), static_cast<Eigen::Index>(dim));
    in.get_array(table.data(), static_cast<std::size_t>(table.size()));
    return DenseEncoder(std::move(table));
}

double similarity(const Vector& query, const Vector& doc)
{
    if (query.size() != doc.size()) {
        throw InvalidInput("similarity: dimension mismatch (" + std::to_string(query.size()) + " vs " +
                           std::to_string(doc.size()) + ")");
    }
    double s = 0.0;
    for (Eigen::Index i = 0; i < query.size(); ++i) {
        s += query[i] * doc[i];
    }
    return s;
}

void TrainingTriple::validate() const
{
    if (negatives.empty()) {
        throw InvalidInput("training triple needs at least one negative");
    }
    if (std::find(negatives.begin(), negatives.end(), positive) != negatives.end()) {
        throw InvalidInput("positive document \"" + positive + "\" is also a negative");
    }
}

std::vector<double> softmax(std::span<const double> logits)
{
    std::vector<double> p(logits.size());
    if (logits.empty()) {
        return p;
    }
    const double shift = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - shift);
        z += p[i];
    }
    for (auto& v : p) {
        v /= z;
    }
    return p;
}

std::vector<double> triple_similarities(const DenseEncoder& encoder, const EncodedTriple& triple)
{
    const Vector q = encoder.encode(triple.query);
    std::vector<double> sims;
    sims.reserve(triple.negatives.size() + 1);
    sims.push_back(similarity(q, encoder.encode(triple.positive)));
    for (const auto& neg : triple.negatives) {
        sims.push_back(similarity(q, encoder.encode(neg)));
    }
    return sims;
}

namespace {

double loss_from_similarities(std::span<const double> sims)
{
    for (double s : sims) {
        if (!std::isfinite(s)) {
            throw NumericError("non-finite similarity in contrastive loss");
        }
    }
    // Margins against the positive; log1p keeps precision when it dominates.
    double shift = 0.0;
    for (std::size_t j = 1; j < sims.size(); ++j) {
        shift = std::max(shift, sims[j] - sims[0]);
    }
    double rest = 0.0;
    for (std::size_t j = 1; j < sims.size(); ++j) {
        rest += std::exp(sims[j] - sims[0] - shift);
    }
    return shift == 0.0 ? std::log1p(rest) : shift + std::log(std::exp(-shift) + rest);
}

}  // namespace

double contrastive_loss(const DenseEncoder& encoder, const EncodedTriple& triple)
{
    if (triple.negatives.empty()) {
        throw InvalidInput("training triple needs at least one negative");
    }
    return loss_from_similarities(triple_similarities(encoder, triple));
}

LossGradient contrastive_loss_gradient(const DenseEncoder& encoder, std::span<const EncodedTriple> batch)
{
    if (batch.empty()) {
        throw InvalidInput("empty training batch");
    }
    LossGradient out{0.0, Matrix::Zero(encoder.table().rows(), encoder.table().cols())};
    for (const auto& triple : batch) {
        if (triple.negatives.empty()) {
            throw InvalidInput("training triple needs at least one negative");
        }
        const Vector q = encoder.encode(triple.query);
        std::vector<Vector> docs;
        docs.reserve(triple.negatives.size() + 1);
        docs.push_back(encoder.encode(triple.positive));
        for (const auto& neg : triple.negatives) {
            docs.push_back(encoder.encode(neg));
        }
        std::vector<double> sims(docs.size());
        for (std::size_t j = 0; j < docs.size(); ++j) {
            sims[j] = similarity(q, docs[j]);
        }
        out.loss += loss_from_similarities(sims);

        // d loss / d s_j = p_j - [j == 0]
        auto p = softmax(sims);
        p[0] -= 1.0;
        Vector dq = Vector::Zero(q.size());
        for (std::size_t j = 0; j < docs.size(); ++j) {
            dq += p[j] * docs[j];
        }
        add_pooled_gradient(out.gradient, triple.query, dq);
        add_pooled_gradient(out.gradient, triple.positive, p[0] * q);
        for (std::size_t j = 0; j < triple.negatives.size(); ++j) {
            add_pooled_gradient(out.gradient, triple.negatives[j], p[j + 1] * q);
        }
    }
    const double n = static_cast<double>(batch.size());
    out.loss /= n;
    out.gradient /= n;
    return out;
}

double train_step(DenseEncoder& encoder, std::span<const EncodedTriple> batch, double learning_rate)
{
    auto lg = contrastive_loss_gradient(encoder, batch);
    if (!lg.gradient.allFinite() || !std::isfinite(lg.loss)) {
        throw NumericError("non-finite gradient in dense training step");
    }
    if (learning_rate != 0.0) {
        encoder.table() -= learning_rate * lg.gradient;
    }
    return lg.loss;
}

std::vector<double> train(DenseEncoder& encoder, std::span<const EncodedTriple> triples, const TrainOptions& options)
{
    if (triples.empty()) {
        throw InvalidInput("no training triples");
    }
    if (options.batch_size == 0) {
        throw ConfigError("batch size must be positive");
    }
    Rng rng(options.seed);
    std::vector<std::size_t> order(triples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> epoch_losses;
    std::vector<EncodedTriple> batch;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            batch.clear();
            const std::size_t end = std::min(order.size(), start + options.batch_size);
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(triples[order[i]]);
            }
            total += train_step(encoder, batch, options.learning_rate) * static_cast<double>(batch.size());
        }
        epoch_losses.push_back(total / static_cast<double>(triples.size()));
    }
    return epoch_losses;
}

std::vector<EncodedTriple> encode_triples(std::span<const TrainingTriple> triples,
                                          const std::vector<corpus::Document>& docs,
                                          const corpus::SubwordVocab& vocab, std::size_t max_length)
{
    std::unordered_map<std::string, const corpus::Document*> by_id;
    for (const auto& d : docs) {
        by_id.emplace(d.doc_id, &d);
    }
    auto doc_pieces = [&](const std::string& id) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw DependencyError("training triple references unknown doc \"" + id + "\"");
        }
        return corpus::tokenize(it->second->text(), vocab, max_length);
    };
    std::vector<EncodedTriple> out;
    out.reserve(triples.size());
    for (const auto& t : triples) {
        t.validate();
        EncodedTriple e;
        e.query = corpus::tokenize(t.query, vocab, max_length);
        e.positive = doc_pieces(t.positive);
        for (const auto& n : t.negatives) {
            e.negatives.push_back(doc_pieces(n));
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<TrainingTriple> sample_training_triples(const std::vector<corpus::Query>& queries,
                                                    const corpus::Qrels& qrels, const sparse::InvertedIndex& index,
                                                    std::size_t negatives, std::size_t depth, std::uint64_t seed)
{
    if (negatives == 0) {
        throw ConfigError("at least one negative per triple is required");
    }
    Rng rng(seed);
    std::vector<TrainingTriple> out;
    for (const auto& q : queries) {
        auto relevant = qrels.relevant(q.query_id);
        if (relevant.empty() || q.terms.empty()) {
            continue;
        }
        std::vector<std::string> pool;
        for (const auto& e : sparse::search_topk(index, q, std::max<std::size_t>(depth, 1)).entries) {
            if (qrels.grade(q.query_id, e.doc_id) == 0) {
                pool.push_back(e.doc_id);
            }
        }
        const std::string text = join(q.terms);
        for (const auto& pos : relevant) {
            if (!index.ordinal(pos)) {
                continue;
            }
            TrainingTriple t{text, pos, {}};
            std::vector<std::string> candidates = pool;
            for (std::size_t i = candidates.size(); i > 1; --i) {
                std::swap(candidates[i - 1], candidates[rng.below(i)]);
            }
            if (candidates.size() > negatives) {
                candidates.resize(negatives);
            }
            std::unordered_set<std::string> chosen(candidates.begin(), candidates.end());
            std::size_t attempts = 0;
            while (candidates.size() < negatives && attempts < 64 * negatives) {
                ++attempts;
                const auto& id = index.doc_id(static_cast<std::uint32_t>(rng.below(index.doc_count())));
                if (qrels.grade(q.query_id, id) == 0 && chosen.insert(id).second) {
                    candidates.push_back(id);
                }
            }
            if (candidates.empty()) {
                continue;
            }
            t.negatives = std::move(candidates);
            out.push_back(std::move(t));
        }
    }
    return out;
}

void DenseIndex::save(const std::filesystem::path& path) const
{
    io::BinaryWriter out(path);
    out.magic(kIndexMagic);
    out.put(kVersion);
    out.put<std::uint64_t>(static_cast<std::uint64_t>(vectors.cols()));
    out.put<std::uint64_t>(doc_ids.size());
    for (const auto& id : doc_ids) {
        out.put_string(id);
    }
    out.put_array(vectors.data(), static_cast<std::size_t>(vectors.size()));
    out.finish();
}

DenseIndex DenseIndex::load(const std::filesystem::path& path)
{
    io::BinaryReader in(path);
    in.expect_magic(kIndexMagic);
    if (in.get<std::uint32_t>() != kVersion) {
        throw ParseError(path.string() + ": unsupported dense index version");
    }
    auto dim = in.get<std::uint64_t>();
    auto n = in.get<std::uint64_t>();
    DenseIndex index;
    index.doc_ids.resize(n);
    for (auto& id : index.doc_ids) {
        id = in.get_string();
    }
    index.vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    in.get_array(index.vectors.data(), static_cast<std::size_t>(index.vectors.size()));
    return index;
}

DenseIndex build_dense_index(const DenseEncoder& encoder, const std::vector<corpus::Document>& docs,
                             const corpus::SubwordVocab& vocab, std::size_t max_length)
{
    DenseIndex index;
    index.vectors.resize(static_cast<Eigen::Index>(docs.size()), static_cast<Eigen::Index>(encoder.dim()));
    for (std::size_t i = 0; i < docs.size(); ++i) {
        auto ids = corpus::tokenize(docs[i].text(), vocab, max_length);
        index.vectors.row(static_cast<Eigen::Index>(i)) = encoder.encode(ids).transpose();
        index.doc_ids.push_back(docs[i].doc_id);
    }
    return index;
}

RankedList dense_search_topk(const DenseIndex& index, const Vector& query_vector, corpus::QueryId query_id,
                             std::size_t k)
{
    if (k == 0) {
        throw ConfigError("k must be at least 1");
    }
    if (index.doc_count() > 0 && query_vector.size() != index.vectors.cols()) {
        throw InvalidInput("query vector does not match dense index dimension");
    }
    auto worse = [](const ScoredDoc& a, const ScoredDoc& b) { return ranks_before(a, b); };
    std::priority_queue<ScoredDoc, std::vector<ScoredDoc>, decltype(worse)> heap(worse);
    for (std::size_t i = 0; i < index.doc_count(); ++i) {
        const Vector row = index.vectors.row(static_cast<Eigen::Index>(i)).transpose();
        ScoredDoc cand{index.doc_ids[i], similarity(query_vector, row)};
        if (heap.size() < k) {
            heap.push(std::move(cand));
        } else if (ranks_before(cand, heap.top())) {
            heap.pop();
            heap.push(std::move(cand));
        }
    }
    RankedList out;
    out.query_id = query_id;
    while (!heap.empty()) {
        out.entries.push_back(heap.top());
        heap.pop();
    }
    std::reverse(out.entries.begin(), out.entries.end());
    return out;
}

RankedList dense_search_topk(const DenseIndex& index, const DenseEncoder& encoder, std::span<const PieceId> query,
                             corpus::QueryId query_id, std::size_t k)
{
    return dense_search_topk(index, encoder.encode(query), query_id, k);
}

}  // namespace cmt::dense
