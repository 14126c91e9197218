#pragma once

// End-to-end experiment driver behind the command-line tool.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "entk/config.hpp"
#include "entk/data.hpp"

namespace entk {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitInvalidConfig = 2,
  kExitDiverged = 3,
  kExitCorruptCheckpoint = 4,
};

struct RunOptions {
  bool force = false;
  bool dry_run = false;
  bool resume = false;
  /// Checkpoint used by kernel/analyze instead of the run's final one.
  std::optional<std::filesystem::path> checkpoint;
};

/// Training data exactly as the config describes it (modadd carries its split).
Dataset build_dataset(const ExperimentConfig& cfg);
/// Kernel evaluation set: TMS -> training set; modadd -> full lattice unless
/// eval_set = train.
Dataset eval_dataset(const ExperimentConfig& cfg, const Dataset& ds);
/// Checkpoint epochs: 0, every checkpoint_every, and the last epoch.
std::vector<int> checkpoint_schedule(const ExperimentConfig& cfg);

/// Step plan for `command` (train, kernel, analyze, report, all).
std::vector<std::string> plan(const std::string& command, const ExperimentConfig& cfg);

/// Runs `command`; returns one of the ExitCode values. Errors are reported
/// on `err`, progress on `log`.
int run_command(const std::string& command, const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log,
                std::ostream& err);

}  // namespace entk
