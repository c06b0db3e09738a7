#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "forge/corpus_io.hpp"
#include "forge/model.hpp"
#include "forge/tokenizer.hpp"

namespace forge::train {

using nn::Params;
using Sequence = std::vector<nn::TokenId>;

struct TrainConfig {
    double lr_max = 6e-4;
    double lr_min = 6e-5;
    std::uint64_t warmup_steps = 2000;
    std::uint64_t total_steps = 600000;
    double weight_decay = 0.1;
    double clip_norm = 1.0;
    std::uint64_t micro_batch = 4;
    std::uint64_t grad_accum = 30;
    std::uint64_t ranks = 1;
    /// Tokens per packed sequence (L).
    std::uint64_t sequence_length = 4096;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::uint64_t log_interval = 10;
    /// 0 disables periodic checkpoints.
    std::uint64_t checkpoint_interval = 0;
    unsigned threads = 1;

    std::uint64_t sequences_per_step() const { return micro_batch * grad_accum * ranks; }

    /// Throws usage_error when the invariants do not hold.
    void validate() const;

    /// The published recipe, including 7 data-parallel ranks.
    static TrainConfig xmodel();

    bool operator==(const TrainConfig&) const = default;
};

TrainConfig load_train_config(const std::filesystem::path& path);
void save_train_config(const std::filesystem::path& path, const TrainConfig& cfg);

/// Linear warmup from zero, then cosine annealing to lr_min at total_steps.
double lr_at(std::uint64_t step, const TrainConfig& cfg);

/// Tokens consumed after `step` optimizer steps.
std::uint64_t tokens_seen(std::uint64_t step, const TrainConfig& cfg, std::uint64_t sequence_length);

double global_norm(const Params& grads);

/// Scales every gradient by clip_norm / norm when the global norm exceeds
/// clip_norm. Returns the pre-clip norm. Throws data_error
/// ("non_finite_gradient") if any gradient is NaN or infinite.
double clip_grads(Params& grads, double clip_norm);

struct OptimizerState {
    Params m;
    Params v;
    std::uint64_t step = 0;

    static OptimizerState zeros(const nn::ModelConfig& cfg);
};

/// AdamW with bias correction and decoupled weight decay (not applied to
/// norm gains).
void adamw_step(Params& params, const Params& grads, OptimizerState& state, double lr, const TrainConfig& cfg);

double param_l2_norm(const Params& params);

struct TrainLogRow {
    std::uint64_t step = 0;
    std::uint64_t tokens_seen = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
    double param_l2 = 0.0;
};

inline constexpr const char* kLogHeader = "step,tokens_seen,lr,train_loss,val_loss,param_l2";

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const TrainLogRow& row);

/// Parses a training log. Throws data_error naming the line for malformed rows.
std::vector<TrainLogRow> read_log_csv(std::istream& in);
std::vector<TrainLogRow> read_log_csv(const std::filesystem::path& path);

/// Splits a sequence into inputs (all but last) and targets (all but first).
void split_sequence(const Sequence& seq, Sequence& inputs, Sequence& targets);

/// Mean loss over validation sequences. Throws data_error when empty.
double validate(const Params& params, const std::vector<Sequence>& sequences);

/// Tokenizes documents, packs them at `sequence_length` (keeping a trailing
/// partial sequence of at least two tokens), then validates.
double validate_docs(const Params& params, const std::vector<Document>& docs, const tok::TokenizerModel& tokenizer,
                     std::size_t sequence_length);

std::vector<Sequence> pack_validation(const std::vector<Document>& docs, const tok::TokenizerModel& tokenizer,
                                      std::size_t sequence_length);

/// Throws usage_error if any id appears in both sets.
void check_disjoint(const std::vector<Document>& train_docs, const std::vector<Document>& val_docs);

struct StepResult {
    double loss = 0.0;
    double grad_norm = 0.0;
};

/// One optimizer step over `batch` (sequences_per_step sequences, consumed as
/// grad_accum * ranks micro-batches). Gradients are averaged over the batch.
StepResult train_step(Params& params, OptimizerState& state, const std::vector<Sequence>& batch,
                      const TrainConfig& cfg, double lr);

struct TrainHooks {
    std::function<void(const TrainLogRow&)> on_log;
    std::function<void(std::uint64_t step, const Params&)> on_checkpoint;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    Params params;
};

/// Runs cfg.total_steps optimizer steps over the packed sequences (cycled in
/// order; each must hold cfg.sequence_length tokens). Validation uses `val` when non-empty. Throws data_error on a
/// non-finite loss after reporting the offending row through on_log.
TrainResult train(Params params, const TrainConfig& cfg, const std::vector<Sequence>& data,
                  const std::vector<Sequence>& val, const TrainHooks& hooks = {});

}  // namespace forge::train
