#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "forge/trainer.hpp"

namespace forge::pipeline {

namespace fs = std::filesystem;

enum class Stage { filter, kn, dedup, tok, mix, train };

std::string_view to_string(Stage stage);
std::optional<Stage> parse_stage(std::string_view name);

struct StageSpec {
    Stage stage = Stage::filter;
    fs::path config;
};

struct PipelineConfig {
    fs::path input;
    std::vector<StageSpec> stages;
    fs::path workspace;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    /// Stages must follow filter -> kn -> dedup -> tok -> mix -> train (any
    /// may be omitted) and every referenced file must exist.
    void validate() const;
};

/// Relative paths inside the file resolve against the file's directory.
PipelineConfig load_pipeline_config(const fs::path& path);

enum class StageStatus { ran, cached };

struct StageOutcome {
    Stage stage = Stage::filter;
    StageStatus status = StageStatus::ran;
    std::vector<fs::path> outputs;
    std::string summary;
};

struct PipelineReport {
    std::vector<StageOutcome> stages;
};

/// Runs the stages in order inside cfg.workspace/<stage>/. Each stage writes a
/// manifest.json with input, config and output hashes; a stage whose recorded
/// hashes still match is reported as cached and not rerun. A failing stage
/// rethrows with the stage name prefixed. Progress lines go to `log`.
PipelineReport run_pipeline(const PipelineConfig& cfg, std::ostream* log = nullptr);

struct CurveFiles {
    std::size_t rows = 0;
    std::vector<fs::path> files;
};

/// Writes <metric>_vs_step.csv and <metric>_vs_tokens.csv for train_loss,
/// val_loss and param_l2 (plus loss.svg and param_l2.svg when `svg`). Checks
/// that steps increase strictly and that tokens_seen equals
/// step * tokens_per_step on every row; when tokens_per_step is absent it is
/// inferred from the first row.
CurveFiles emit_curves(const fs::path& log_csv, const fs::path& out_dir,
                       std::optional<std::uint64_t> tokens_per_step = std::nullopt, bool svg = false);

}  // namespace forge::pipeline
