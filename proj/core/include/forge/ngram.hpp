#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "forge/corpus_io.hpp"

namespace forge::ngram {

using WordId = std::uint32_t;

inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::string_view kBos = "<s>";
inline constexpr std::string_view kEos = "</s>";
inline constexpr WordId kUnkId = 0;
inline constexpr WordId kBosId = 1;
inline constexpr WordId kEosId = 2;

/// log10 value written for probabilities that are undefined (the <s> unigram).
inline constexpr double kNoProb = -99.0;

/// Splits text into sentences at newlines and after . ! ? 。 ！ ？, then into
/// words: whitespace-separated for en, one word per character for zh.
std::vector<std::vector<std::string>> split_sentences(std::string_view text, Lang lang);

struct KnOptions {
    int order = 5;
    double discount = 0.75;
};

/// Interpolated Kneser-Ney model with a fixed discount per order, stored in
/// backoff form: every listed n-gram carries its interpolated probability and
/// every context carries its interpolation weight.
class NgramModel {
public:
    struct Entry {
        double log10_prob = kNoProb;
        double log10_backoff = 0.0;
        bool operator==(const Entry&) const = default;
    };

    int order() const { return order_; }
    double discount() const { return discount_; }
    Lang lang() const { return lang_; }
    const std::vector<std::string>& vocab() const { return vocab_; }

    /// Number of words that can be predicted: the vocabulary minus <s>.
    std::size_t predictable_size() const { return vocab_.size() - 1; }

    WordId word_id(std::string_view word) const;

    /// Natural-log probability of `word` after `context`; only the last
    /// order-1 context words matter, unknown words map to <unk>.
    double log_prob(const std::vector<std::string>& context, std::string_view word) const;
    double log_prob_ids(const WordId* context, std::size_t context_len, WordId word) const;

    const std::unordered_map<std::string, Entry>& level(int n) const { return levels_.at(n - 1); }

    bool operator==(const NgramModel&) const = default;

private:
    friend NgramModel train_kn(const std::vector<Document>&, const KnOptions&);
    friend NgramModel read_model(std::istream&);
    friend void write_model(std::ostream&, const NgramModel&);

    const Entry* find(const WordId* ids, std::size_t n) const;

    int order_ = 0;
    double discount_ = 0.75;
    Lang lang_ = Lang::en;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, WordId> index_;
    // levels_[k-1] holds the k-grams, keyed by the packed id sequence.
    std::vector<std::unordered_map<std::string, Entry>> levels_;
};

/// Packs an id sequence into a byte-string key.
std::string pack_key(const WordId* ids, std::size_t n);

/// Trains one model over all docs (their languages are expected to agree;
/// the first document's language is recorded). Throws on an empty corpus,
/// order < 1 or a discount outside (0, 1].
NgramModel train_kn(const std::vector<Document>& docs, const KnOptions& opts);

void write_model(std::ostream& out, const NgramModel& model);
NgramModel read_model(std::istream& in);

/// One model per language, chosen at scoring time by Document::lang.
using ModelBundle = std::map<Lang, NgramModel>;

ModelBundle train_bundle(const std::vector<Document>& docs, const KnOptions& opts);
void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& path);

struct PplScore {
    std::string doc_id;
    double ppl = 0.0;
    std::size_t token_count = 0;
};

/// Throws data_error("token_count_zero ...") for a document without words.
PplScore perplexity(const NgramModel& model, const Document& doc);
PplScore perplexity(const ModelBundle& bundle, const Document& doc);

void write_scores_csv(const std::filesystem::path& path, const std::vector<PplScore>& scores);
std::vector<PplScore> read_scores_csv(const std::filesystem::path& path);

struct PplThreshold {
    double max_ppl;
};
struct PplPercentile {
    double percent;
};

struct PplFilterResult {
    std::set<std::string> keep;
    std::optional<std::string> warning;
};

/// Absolute mode keeps ppl <= T. Percentile mode keeps the floor(q% * n)
/// lowest-perplexity documents (ordered by ppl, then id) plus any ties with
/// the last one kept.
PplFilterResult ppl_filter(const std::vector<PplScore>& scores, PplThreshold mode);
PplFilterResult ppl_filter(const std::vector<PplScore>& scores, PplPercentile mode);

}  // namespace forge::ngram
