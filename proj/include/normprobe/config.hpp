// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: `key = value` text with `#` comments, layered
// over per-command profile defaults. Unknown keys are errors.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "normprobe/training.hpp"

namespace normprobe {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Command { Localize, OverlapSweep, GroupNormSweep, BatchNormCompare, Verify, Report };
enum class Profile { Desk, Paper };

std::string to_string(Command c);
std::optional<Command> parse_command(std::string_view name);
std::string to_string(Profile p);
std::optional<Profile> parse_profile(std::string_view name);

struct ExperimentConfig {
  Command command = Command::Localize;
  Profile profile = Profile::Desk;

  ModelConfig model;
  TrainConfig train;

  bool probes = true;
  ProbeConfig probe;
  std::size_t probe_inference_batch = 16;

  std::size_t samples = 10000;  // predictions per index for the t-tests
  std::size_t sample_batch = 16;
  double alpha = 0.1;
  bool bonferroni = false;
  std::size_t traces = 64;  // individual prediction curves kept for plotting

  std::vector<std::size_t> overlap_grid;
  std::size_t eval_pairs = 1000;

  std::vector<std::size_t> groups_grid;
  std::vector<double> lr_grid;
  std::size_t seed_count = 1;  // sweeps use seeds seed, seed + 1, ...

  bool verify_f64 = true;
  std::size_t gradient_cases = 24;
  std::size_t locality_seeds = 10;

  std::string out_dir;

  /// Throws ConfigError describing the first problem for this command.
  void validate() const;
};

/// Every setting materialized for `command` under `profile`.
ExperimentConfig default_config(Command command, Profile profile);

/// Applies the lines of `text` over `base`. Throws ConfigError (with the
/// line number) on syntax errors, unknown keys, duplicates and bad values.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base);

/// Reads a config file. A `.json` path is taken as a run manifest and its
/// recorded config is replayed.
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base);

/// (key, value) for every setting, in a fixed order; values parse back exactly.
std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg);

/// config_entries() as config-file text.
std::string format_config(const ExperimentConfig& cfg);

}  // namespace normprobe
