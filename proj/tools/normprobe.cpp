// SPDX-License-Identifier: Apache-2.0
//
// normprobe <localize|overlap-sweep|groupnorm-sweep|batchnorm-compare|verify|report>
//           --config <path> [--seed N] [--out DIR] [--profile desk|paper]
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "normprobe/config.hpp"
#include "normprobe/experiments.hpp"

namespace fs = std::filesystem;
using namespace normprobe;

int main(int argc, char** argv) {
  CLI::App app{"Positional information through normalization layers: experiments and checks"};
  std::string command;
  std::string config_path;
  std::string out;
  std::string profile_name = "desk";
  std::optional<std::uint64_t> seed;
  app.add_option("command", command, "localize, overlap-sweep, groupnorm-sweep, batchnorm-compare, verify or report")
      ->required();
  app.add_option("--config", config_path, "key = value config file, or a run manifest.json to replay");
  app.add_option("--seed", seed, "master seed, overriding the config");
  app.add_option("--out", out, "run directory, overriding out_dir");
  app.add_option("--profile", profile_name, "defaults to layer the config over: desk or paper");
  app.set_version_flag("--version", code_version());

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  const auto cmd = parse_command(command);
  if (!cmd) {
    std::cerr << "unknown command '" << command << "'\n" << app.help();
    return kExitConfig;
  }
  const auto profile = parse_profile(profile_name);
  if (!profile) {
    std::cerr << "unknown profile '" << profile_name << "' (desk or paper)\n";
    return kExitConfig;
  }

  if (*cmd == Command::Report) {
    fs::path dir = out;
    if (dir.empty() && !config_path.empty()) dir = fs::path(config_path).parent_path();
    if (dir.empty()) dir = ".";
    ExperimentConfig cfg = default_config(Command::Report, *profile);
    return execute(cfg, dir, std::cerr);
  }

  ExperimentConfig cfg = default_config(*cmd, *profile);
  if (config_path.empty()) {
    if (*cmd != Command::Verify) {
      std::cerr << "config error: --config is required for " << command << "\n";
      return kExitConfig;
    }
  } else {
    try {
      cfg = load_config(config_path, cfg);
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return kExitConfig;
    }
  }
  if (seed) cfg.train.seed = *seed;
  if (!out.empty()) cfg.out_dir = out;
  return execute(cfg, cfg.out_dir, std::cerr);
}
