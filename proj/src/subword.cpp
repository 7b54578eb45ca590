#include "cmt/subword.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cmt/corpus.hpp"
#include "cmt/error.hpp"

namespace cmt::corpus {

namespace {

constexpr std::string_view kVocabHeader = "cmt-subword-vocab 1";

std::size_t utf8_length(unsigned char lead)
{
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

struct WordEntry {
    std::vector<std::string> symbols;
    std::size_t count = 0;
};

}  // namespace

std::vector<std::string> split_code_points(std::string_view text)
{
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t n = utf8_length(static_cast<unsigned char>(text[i]));
        bool valid = i + n <= text.size();
        for (std::size_t k = 1; valid && k < n; ++k) {
            valid = (static_cast<unsigned char>(text[i + k]) & 0xC0) == 0x80;
        }
        if (!valid) {
            n = 1;
        }
        out.emplace_back(text.substr(i, n));
        i += n;
    }
    return out;
}

SubwordVocab::SubwordVocab()
{
    add_piece(std::string(kMaskPiece));
    add_piece(std::string(kUnkPiece));
}

bool SubwordVocab::add_piece(std::string piece)
{
    if (index_.contains(piece)) {
        return false;
    }
    max_piece_chars_ = std::max(max_piece_chars_, split_code_points(piece).size());
    index_.emplace(piece, static_cast<PieceId>(pieces_.size()));
    pieces_.push_back(std::move(piece));
    return true;
}

PieceId SubwordVocab::find(std::string_view piece) const
{
    auto it = index_.find(std::string(piece));
    return it == index_.end() ? -1 : it->second;
}

void SubwordVocab::tokenize_word(std::string_view word, std::vector<PieceId>& out) const
{
    auto chars = split_code_points(word);
    std::size_t i = 0;
    std::string candidate;
    while (i < chars.size()) {
        std::size_t longest = std::min(chars.size(), i + max_piece_chars_);
        PieceId hit = -1;
        std::size_t hit_end = i + 1;
        for (std::size_t j = longest; j > i; --j) {
            candidate.clear();
            for (std::size_t k = i; k < j; ++k) {
                candidate += chars[k];
            }
            if (auto id = find(candidate); id >= 0) {
                hit = id;
                hit_end = j;
                break;
            }
        }
        out.push_back(hit >= 0 ? hit : kUnk);
        i = hit_end;
    }
}

void SubwordVocab::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open for writing: " + path.string());
    }
    out << kVocabHeader << '\n' << pieces_.size() << ' ' << merges_.size() << '\n';
    for (const auto& p : pieces_) {
        out << p << '\n';
    }
    for (const auto& [l, r] : merges_) {
        out << l << ' ' << r << '\n';
    }
}

SubwordVocab SubwordVocab::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DependencyError("cannot open: " + path.string());
    }
    std::string header;
    std::getline(in, header);
    if (header != kVocabHeader) {
        throw ParseError(path.string() + ": not a subword vocab file", 1);
    }
    std::size_t n_pieces = 0, n_merges = 0;
    std::string counts;
    std::getline(in, counts);
    std::istringstream cs(counts);
    if (!(cs >> n_pieces >> n_merges) || n_pieces < 2) {
        throw ParseError(path.string() + ": bad counts line", 2);
    }
    SubwordVocab vocab;
    std::string line;
    for (std::size_t i = 0; i < n_pieces; ++i) {
        if (!std::getline(in, line)) {
            throw ParseError(path.string() + ": truncated piece list", 3 + i);
        }
        if (i >= 2) {
            vocab.add_piece(line);
        }
    }
    for (std::size_t i = 0; i < n_merges; ++i) {
        if (!std::getline(in, line)) {
            throw ParseError(path.string() + ": truncated merge list", 3 + n_pieces + i);
        }
        auto sp = line.find(' ');
        if (sp == std::string::npos) {
            throw ParseError(path.string() + ": bad merge rule", 3 + n_pieces + i);
        }
        vocab.merges_.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    return vocab;
}

SubwordVocab train_subword_vocab(std::span<const std::string> texts, std::size_t target_size)
{
    std::map<std::string, std::size_t> word_counts;
    for (const auto& t : texts) {
        for (auto& w : analyze(t)) {
            ++word_counts[w];
        }
    }
    std::vector<WordEntry> words;
    std::set<std::string> alphabet;
    for (const auto& [w, c] : word_counts) {
        WordEntry e{split_code_points(w), c};
        alphabet.insert(e.symbols.begin(), e.symbols.end());
        words.push_back(std::move(e));
    }
    if (target_size < alphabet.size() + 2) {
        throw ConfigError("target vocab size " + std::to_string(target_size) + " is below " +
                          std::to_string(alphabet.size() + 2) + " (distinct characters + MASK + UNK)");
    }

    SubwordVocab vocab;
    for (const auto& ch : alphabet) {
        vocab.add_piece(ch);
    }

    while (vocab.size() < target_size) {
        std::map<std::pair<std::string, std::string>, std::size_t> pair_counts;
        for (const auto& e : words) {
            for (std::size_t i = 0; i + 1 < e.symbols.size(); ++i) {
                pair_counts[{e.symbols[i], e.symbols[i + 1]}] += e.count;
            }
        }
        if (pair_counts.empty()) {
            break;
        }
        // std::map iterates in lexicographic order, so the first maximum wins ties.
        auto best = pair_counts.begin();
        for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
            if (it->second > best->second) {
                best = it;
            }
        }
        const auto [left, right] = best->first;
        const std::string merged = left + right;
        for (auto& e : words) {
            std::vector<std::string> next;
            next.reserve(e.symbols.size());
            for (std::size_t i = 0; i < e.symbols.size(); ++i) {
                if (i + 1 < e.symbols.size() && e.symbols[i] == left && e.symbols[i + 1] == right) {
                    next.push_back(merged);
                    ++i;
                } else {
                    next.push_back(std::move(e.symbols[i]));
                }
            }
            e.symbols = std::move(next);
        }
        vocab.merges_.emplace_back(left, right);
        vocab.add_piece(merged);
    }
    return vocab;
}

std::vector<PieceId> tokenize(std::string_view text, const SubwordVocab& vocab, std::size_t max_length)
{
    std::vector<PieceId> ids;
    for (const auto& w : analyze(text)) {
        vocab.tokenize_word(w, ids);
        if (ids.size() >= max_length) {
            break;
        }
    }
    if (ids.size() > max_length) {
        ids.resize(max_length);
    }
    return ids;
}

std::string detokenize(std::span<const PieceId> ids, const SubwordVocab& vocab)
{
    std::string out;
    for (auto id : ids) {
        out += vocab.piece(id);
    }
    return out;
}

double subword_ratio(std::span<const std::string> texts, const SubwordVocab& vocab)
{
    std::size_t words = 0;
    std::size_t split = 0;
    std::vector<PieceId> ids;
    for (const auto& t : texts) {
        std::istringstream ws(t);
        std::string token;
        while (ws >> token) {
            ids.clear();
            for (const auto& w : analyze(token)) {
                vocab.tokenize_word(w, ids);
            }
            if (ids.empty()) {
                continue;
            }
            ++words;
            if (ids.size() >= 2) {
                ++split;
            }
        }
    }
    return words == 0 ? 0.0 : static_cast<double>(split) / static_cast<double>(words);
}

}  // namespace cmt::corpus
