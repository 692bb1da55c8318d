#pragma once

#include "crossrf/config.hpp"
#include "crossrf/eval_report.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace crossrf::cli {

enum ExitCode : int {
    kOk = 0,
    kUnexpected = 1,
    kConfigError = 2,
    kIOError = 3,
    kCheckpointError = 4,
    kNumericalError = 5,
};

struct CommandOptions {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;  ///< data dir for simulate, output dir otherwise
    std::optional<std::uint64_t> seed;
    int budget = 8;
    std::optional<std::filesystem::path> source_checkpoint;  ///< default <out>/source.ckpt
    std::optional<std::filesystem::path> target_checkpoint;  ///< default <out>/target.ckpt
};

/// Config with command-line overrides applied and validated.
ExperimentConfig resolve_config(const CommandOptions& opts);

// Each command writes deterministic artefacts plus a <command>.run.json sidecar holding wall time
// and host details. They throw; run() maps exceptions to exit codes.

/// Returns the manifest path.
std::filesystem::path cmd_simulate(const CommandOptions& opts);
/// Writes source.ckpt and source_log.csv. Returns the checkpoint path.
std::filesystem::path cmd_train_source(const CommandOptions& opts);
/// Writes target.ckpt and adapt_log.csv. Returns the checkpoint path.
std::filesystem::path cmd_adapt(const CommandOptions& opts);
/// Writes report.csv, report.json and confusion_<stage>.csv.
ComparisonReport cmd_evaluate(const CommandOptions& opts);
/// Writes trials.csv and best_config.json.
SearchResult cmd_search(const CommandOptions& opts);

/// Exit code for the exception currently being handled.
int exit_code_for_current_exception(std::string& message);

/// Full command line entry point: `crossrf <command> --config <path> [--out <dir>] [--seed <u64>] [--budget <n>]`.
int run(int argc, char** argv);

}  // namespace crossrf::cli
