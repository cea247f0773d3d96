// SPDX-License-Identifier: Apache-2.0
//
// The experiment commands. Each writes CSV tables, checkpoints, plots and
// a manifest.json into its run directory.
#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "normprobe/config.hpp"
#include "normprobe/verify.hpp"

namespace normprobe {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2, kExitVerify = 3 };

struct LocalizeResult {
  double final_loss = 0.0;
  std::size_t output_distance = 0;            // from the network output's marginals
  std::optional<std::size_t> probe_distance;  // last probe row of the map
  double spearman = 0.0;                      // mean prediction against index
  std::vector<bool> output_localized;
  std::string checkpoint_sha256;
};

struct OverlapPoint {
  std::size_t overlap = 0;
  double final_mse = 0.0;
  double final_train_loss = 0.0;
};

struct GroupRun {
  std::size_t groups = 0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  std::size_t distance = 0;
};

struct GroupBest {
  std::size_t groups = 0;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  std::size_t distance = 0;
};

struct GroupNormResult {
  std::vector<GroupRun> runs;
  std::vector<GroupBest> best;              // best over learning rates, per (groups, seed)
  std::map<std::size_t, double> mean_best;  // groups -> mean over seeds
};

struct BatchNormResult {
  std::size_t minibatch_distance = 0;
  std::size_t population_distance = 0;
  std::size_t normfree_distance = 0;
  double final_loss = 0.0;
  std::string minibatch_checkpoint_sha256;  // digest of the bytes each evaluation loaded
  std::string population_checkpoint_sha256;
};

LocalizeResult run_localize(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                            std::ostream* log = nullptr);
std::vector<OverlapPoint> run_overlap_sweep(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                                            std::ostream* log = nullptr);
GroupNormResult run_groupnorm_sweep(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                                    std::ostream* log = nullptr);
BatchNormResult run_batchnorm_compare(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                                      std::ostream* log = nullptr);
std::vector<CheckResult> run_verify(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                                    std::ostream* log = nullptr);

/// Validates, runs cfg.command into `dir` and maps the outcome to an exit
/// code. A non-finite loss still leaves a manifest, flagged "non_finite".
int execute(const ExperimentConfig& cfg, const std::filesystem::path& dir, std::ostream& log);

/// Version string recorded in manifests.
std::string code_version();

}  // namespace normprobe
