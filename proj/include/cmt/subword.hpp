#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cmt::corpus {

using PieceId = std::int32_t;

inline constexpr std::size_t kDefaultMaxSequenceLength = 256;

/// Byte-pair-style subword vocabulary over UTF-8 code points.
///
/// Piece 0 is the MASK piece and piece 1 the UNK piece. Both are bracketed
/// strings that the text analyzer never emits, so no merge can produce them.
class SubwordVocab {
  public:
    static constexpr PieceId kMask = 0;
    static constexpr PieceId kUnk = 1;
    static constexpr std::string_view kMaskPiece = "[MASK]";
    static constexpr std::string_view kUnkPiece = "[UNK]";

    SubwordVocab();

    std::size_t size() const { return pieces_.size(); }
    const std::string& piece(PieceId id) const { return pieces_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& pieces() const { return pieces_; }
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

    /// -1 when absent.
    PieceId find(std::string_view piece) const;
    bool contains(std::string_view piece) const { return find(piece) >= 0; }

    /// Greedy longest-match segmentation of one analyzed word.
    void tokenize_word(std::string_view word, std::vector<PieceId>& out) const;

    void save(const std::filesystem::path& path) const;
    static SubwordVocab load(const std::filesystem::path& path);

  private:
    friend SubwordVocab train_subword_vocab(std::span<const std::string>, std::size_t);

    /// Returns false when the piece already existed.
    bool add_piece(std::string piece);

    std::vector<std::string> pieces_;
    std::unordered_map<std::string, PieceId> index_;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::size_t max_piece_chars_ = 1;
};

/// Splits UTF-8 into code points; invalid bytes become single-byte units.
std::vector<std::string> split_code_points(std::string_view text);

/// Frequency-greedy pair merging. Ties go to the lexicographically smallest
/// (left, right) pair. Throws ConfigError when target_size cannot hold every
/// distinct character plus MASK and UNK.
SubwordVocab train_subword_vocab(std::span<const std::string> texts, std::size_t target_size);

/// Analyzes `text` into words and segments each; never fails. Output is
/// truncated to `max_length` pieces.
std::vector<PieceId> tokenize(std::string_view text, const SubwordVocab& vocab,
                              std::size_t max_length = kDefaultMaxSequenceLength);

/// Concatenation of the pieces, without separators.
std::string detokenize(std::span<const PieceId> ids, const SubwordVocab& vocab);

/// Fraction of whitespace-delimited words segmented into two or more pieces.
/// Words that analyze to nothing (pure punctuation) are not counted.
double subword_ratio(std::span<const std::string> texts, const SubwordVocab& vocab);

}  // namespace cmt::corpus
