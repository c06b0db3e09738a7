#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "forge/corpus_io.hpp"
#include "forge/tokenizer.hpp"

namespace forge::mix {

using tok::TokenId;
using TokenDoc = std::vector<TokenId>;

struct MixtureEntry {
    std::string name;
    std::uint64_t num_tokens = 0;
    double weight = 0.0;
    double epochs = 0.0;
    std::string category;
    Lang language = Lang::en;
};

struct MixtureSpec {
    std::vector<MixtureEntry> entries;
    std::uint64_t total_training_tokens = 0;
};

/// Reads the JSON mixture file (per-dataset rows plus total_training_tokens).
/// "language" accepts "en"/"zh" as well as "English"/"Chinese".
MixtureSpec load_mixture_spec(const std::filesystem::path& path);
void save_mixture_spec(const std::filesystem::path& path, const MixtureSpec& spec);

struct EpochCheck {
    std::string name;
    double stated = 0.0;
    double implied = 0.0;
    double relative_deviation = 0.0;
    bool within_tolerance = false;
};

struct MixtureReport {
    double weight_sum = 0.0;
    bool weights_sum_to_one = false;
    std::vector<EpochCheck> epochs;
    /// Human-readable findings: weight sum, invalid rows, epoch deviations.
    std::vector<std::string> findings;

    bool ok() const;
};

/// Informational checks only; never throws on bad values.
MixtureReport validate_mixture(const MixtureSpec& spec, double tolerance = 0.25, double weight_tolerance = 1e-6);

struct SampledDocument {
    std::size_t source = 0;  // index into MixtureSpec::entries
    TokenDoc tokens;
};

/// Document-contiguous weighted sampler. Each draw picks a source with
/// probability proportional to its weight and emits that source's next
/// document; sources wrap around at their end. The stream ends after exactly
/// total_training_tokens tokens (the last document may be cut short).
class MixtureSampler {
public:
    MixtureSampler(MixtureSpec spec, std::map<std::string, std::vector<TokenDoc>> datasets, std::uint64_t seed);

    std::optional<SampledDocument> next();

    std::uint64_t tokens_emitted() const { return emitted_; }
    const MixtureSpec& spec() const { return spec_; }

private:
    std::size_t draw();

    MixtureSpec spec_;
    std::vector<std::vector<TokenDoc>> sources_;
    std::vector<std::size_t> cursor_;
    std::vector<double> cumulative_;
    std::mt19937_64 rng_;
    std::uint64_t emitted_ = 0;
};

/// Draws the whole stream into memory.
std::vector<SampledDocument> sample_stream(const MixtureSpec& spec,
                                           const std::map<std::string, std::vector<TokenDoc>>& datasets,
                                           std::uint64_t seed);

/// Concatenates documents with an eos separator after each and cuts the
/// result into length-L sequences; the final partial chunk is dropped.
class SequencePacker {
public:
    SequencePacker(std::size_t sequence_length, TokenId eos_id);

    void push(const TokenDoc& doc);
    /// Completed sequences so far (moved out).
    std::vector<TokenDoc> take();
    /// Tokens held in the unfinished chunk; these are dropped at the end.
    std::size_t pending() const { return current_.size(); }

private:
    std::size_t length_;
    TokenId eos_;
    TokenDoc current_;
    std::vector<TokenDoc> done_;
};

std::vector<TokenDoc> pack_sequences(const std::vector<TokenDoc>& docs, std::size_t sequence_length, TokenId eos_id);

struct PackedBatchPlan {
    std::uint64_t sequence_length = 0;
    std::uint64_t sequences_per_step = 0;

    std::uint64_t tokens_per_step() const { return sequences_per_step * sequence_length; }
};

/// micro_batch x grad_accum x ranks sequences per optimizer step.
PackedBatchPlan batch_plan(std::uint64_t micro_batch, std::uint64_t grad_accum, std::uint64_t ranks,
                           std::uint64_t sequence_length);

/// Binary file of tokenized documents with source labels.
struct TokenFile {
    std::vector<std::string> sources;
    std::vector<SampledDocument> docs;
};

void write_token_file(const std::filesystem::path& path, const TokenFile& file);
TokenFile read_token_file(const std::filesystem::path& path);

}  // namespace forge::mix
