#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "forge/corpus_io.hpp"

namespace forge::tok {

using TokenId = std::int32_t;

inline constexpr TokenId kUnkId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kNumReserved = 3;
inline constexpr std::size_t kNumBytePieces = 256;

enum class PieceKind { normal, byte, control };

struct Piece {
    std::string surface;
    double log_prob = 0.0;
    PieceKind kind = PieceKind::normal;

    bool operator==(const Piece&) const = default;
};

struct TokenizerSettings {
    /// Normal plus byte pieces; the three reserved control ids come on top.
    std::size_t vocab_size = 32000;
    double coverage = 0.9999;
    std::size_t max_piece_chars = 16;
    bool digit_split = true;
    std::size_t seed_factor = 4;
    int em_iterations = 2;
    double shrink_factor = 0.75;

    bool operator==(const TokenizerSettings&) const = default;
};

/// Surface used for the byte piece of `b`, e.g. "<0xE4>".
std::string byte_piece_surface(std::uint8_t b);

/// Splits text so that every decimal digit is its own segment; other runs pass
/// through untouched. Segments concatenate back to the input.
std::vector<std::string_view> pretokenize(std::string_view text, bool digit_split = true);

class TokenizerModel {
public:
    TokenizerModel() = default;
    TokenizerModel(TokenizerSettings settings, std::vector<Piece> pieces);

    const TokenizerSettings& settings() const { return settings_; }
    /// Normal and byte pieces in id order (id = position + kNumReserved).
    const std::vector<Piece>& pieces() const { return pieces_; }
    /// Total id space including the reserved ids.
    std::size_t id_count() const { return pieces_.size() + kNumReserved; }

    const Piece& piece(TokenId id) const;
    PieceKind kind(TokenId id) const;
    /// Id of a normal piece with this exact surface, or -1.
    TokenId normal_id(std::string_view surface) const;
    TokenId byte_id(std::uint8_t b) const { return byte_ids_[b]; }

    /// Visits every normal piece that starts at cps[pos], shortest first.
    template <typename F>
    void for_each_match(const std::u32string& cps, std::size_t pos, F&& visit) const;

    bool operator==(const TokenizerModel& other) const {
        return settings_ == other.settings_ && pieces_ == other.pieces_;
    }

private:
    struct TrieNode {
        std::vector<std::pair<char32_t, std::uint32_t>> next;  // sorted by char
        TokenId id = -1;
    };

    void build_index();

    TokenizerSettings settings_;
    std::vector<Piece> pieces_;
    std::unordered_map<std::string, TokenId> normal_index_;
    std::vector<TokenId> byte_ids_ = std::vector<TokenId>(kNumBytePieces, -1);
    std::vector<TrieNode> trie_;
};

template <typename F>
void TokenizerModel::for_each_match(const std::u32string& cps, std::size_t pos, F&& visit) const {
    std::uint32_t node = 0;
    for (std::size_t end = pos; end < cps.size(); ++end) {
        const auto& next = trie_[node].next;
        auto it = std::lower_bound(next.begin(), next.end(), cps[end],
                                   [](const auto& e, char32_t c) { return e.first < c; });
        if (it == next.end() || it->first != cps[end]) return;
        node = it->second;
        if (trie_[node].id >= 0) visit(trie_[node].id, end + 1 - pos);
    }
}

/// Model with only the 256 byte pieces, uniformly weighted.
TokenizerModel byte_level_model();

std::vector<TokenId> encode(const TokenizerModel& model, std::string_view text);

/// Viterbi segmentation of one segment given as code points. Returns the ids
/// and writes the path log-probability to `score` when non-null.
std::vector<TokenId> encode_segment(const TokenizerModel& model, const std::u32string& cps, double* score = nullptr);

/// Concatenates surfaces; invalid UTF-8 produced by byte pieces becomes
/// U+FFFD and is counted in `replaced`. Out-of-range ids throw data_error.
std::string decode(const TokenizerModel& model, const std::vector<TokenId>& ids, std::size_t* replaced = nullptr);

/// Tokens emitted per character of input.
double compression_rate(const TokenizerModel& model, const std::vector<Document>& docs);

/// Observations reported while training.
struct TrainTrace {
    /// Corpus log-likelihood measured by each E-step, grouped by pruning round.
    std::vector<std::vector<double>> em_log_likelihood;
    std::size_t seed_pieces = 0;
    std::size_t required_chars = 0;
};

TokenizerModel train_unigram(const std::vector<Document>& docs, const TokenizerSettings& settings,
                             TrainTrace* trace = nullptr);

/// Training settings from JSON; absent keys keep their defaults.
TokenizerSettings load_settings(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const TokenizerModel& model);
TokenizerModel load_model(const std::filesystem::path& path);
std::string model_to_string(const TokenizerModel& model);
TokenizerModel model_from_string(std::string_view text);

}  // namespace forge::tok
