// SPDX-License-Identifier: Apache-2.0
#include "normprobe/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace normprobe {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError("expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& s) { return static_cast<std::size_t>(parse_u64(s)); }

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& s, F parse_one) {
  std::vector<T> out;
  if (s.empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const std::string t = trim(item);
    if (t.empty()) throw ConfigError("empty entry in list '" + s + "'");
    out.push_back(parse_one(t));
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

std::string fmt_size(std::size_t v) { return std::to_string(v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define SIZE_FIELD(key, member)                                                          \
  Field {                                                                                \
    key, [](ExperimentConfig& c, const std::string& v) { c.member = parse_size(v); },    \
        [](const ExperimentConfig& c) { return fmt_size(c.member); }                     \
  }
#define DOUBLE_FIELD(key, member)                                                        \
  Field {                                                                                \
    key, [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(v); },  \
        [](const ExperimentConfig& c) { return format_double(c.member); }                \
  }
#define BOOL_FIELD(key, member)                                                          \
  Field {                                                                                \
    key, [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(v); },    \
        [](const ExperimentConfig& c) { return fmt_bool(c.member); }                     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SIZE_FIELD("length", model.length),
      SIZE_FIELD("depth", model.depth),
      SIZE_FIELD("kernel", model.kernel),
      SIZE_FIELD("hidden", model.hidden),
      Field{"norm",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "none") {
                c.model.norm.reset();
                return;
              }
              const auto n = parse_norm_variant(v);
              if (!n) throw ConfigError("unknown norm '" + v + "'");
              c.model.norm = *n;
            },
            [](const ExperimentConfig& c) {
              return c.model.norm ? to_string(*c.model.norm) : std::string("none");
            }},
      SIZE_FIELD("groups", model.groups),
      DOUBLE_FIELD("norm_epsilon", model.norm_epsilon),
      DOUBLE_FIELD("ema_momentum", model.ema_momentum),
      Field{"padding",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "same") {
                c.model.padding = PaddingMode::SameZero;
              } else if (v == "none") {
                c.model.padding = PaddingMode::None;
              } else {
                throw ConfigError("padding must be same or none, got '" + v + "'");
              }
            },
            [](const ExperimentConfig& c) {
              return std::string(c.model.padding == PaddingMode::SameZero ? "same" : "none");
            }},
      Field{"init", [](ExperimentConfig&, const std::string& v) {
              if (v != "uniform_fan_in") throw ConfigError("only init = uniform_fan_in is supported");
            },
            [](const ExperimentConfig&) { return std::string("uniform_fan_in"); }},
      Field{"seed", [](ExperimentConfig& c, const std::string& v) { c.train.seed = parse_u64(v); },
            [](const ExperimentConfig& c) { return std::to_string(c.train.seed); }},
      SIZE_FIELD("iterations", train.iterations),
      SIZE_FIELD("batch_size", train.batch_size),
      DOUBLE_FIELD("learning_rate", train.learning_rate),
      SIZE_FIELD("grad_accumulation", train.grad_accumulation_steps),
      SIZE_FIELD("eval_interval", train.eval_interval),
      DOUBLE_FIELD("adam_beta1", train.adam_beta1),
      DOUBLE_FIELD("adam_beta2", train.adam_beta2),
      DOUBLE_FIELD("adam_epsilon", train.adam_epsilon),
      BOOL_FIELD("probes", probes),
      SIZE_FIELD("probe_iterations", probe.iterations),
      SIZE_FIELD("probe_batch", probe.batch_size),
      DOUBLE_FIELD("probe_learning_rate", probe.learning_rate),
      SIZE_FIELD("probe_width", probe.width),
      SIZE_FIELD("probe_inference_batch", probe_inference_batch),
      SIZE_FIELD("samples", samples),
      SIZE_FIELD("sample_batch", sample_batch),
      DOUBLE_FIELD("alpha", alpha),
      BOOL_FIELD("bonferroni", bonferroni),
      SIZE_FIELD("traces", traces),
      Field{"overlap_grid",
            [](ExperimentConfig& c, const std::string& v) {
              c.overlap_grid = parse_list<std::size_t>(v, parse_size);
            },
            [](const ExperimentConfig& c) { return join(c.overlap_grid, fmt_size); }},
      SIZE_FIELD("eval_pairs", eval_pairs),
      Field{"groups_grid",
            [](ExperimentConfig& c, const std::string& v) {
              c.groups_grid = parse_list<std::size_t>(v, parse_size);
            },
            [](const ExperimentConfig& c) { return join(c.groups_grid, fmt_size); }},
      Field{"lr_grid",
            [](ExperimentConfig& c, const std::string& v) {
              c.lr_grid = parse_list<double>(v, parse_double);
            },
            [](const ExperimentConfig& c) { return join(c.lr_grid, format_double); }},
      SIZE_FIELD("seed_count", seed_count),
      BOOL_FIELD("verify_f64", verify_f64),
      SIZE_FIELD("gradient_cases", gradient_cases),
      SIZE_FIELD("locality_seeds", locality_seeds),
      Field{"out_dir", [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; },
            [](const ExperimentConfig& c) { return c.out_dir; }},
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

void fail(const std::string& what) { throw ConfigError(what); }

}  // namespace

std::string to_string(Command c) {
  switch (c) {
    case Command::Localize: return "localize";
    case Command::OverlapSweep: return "overlap-sweep";
    case Command::GroupNormSweep: return "groupnorm-sweep";
    case Command::BatchNormCompare: return "batchnorm-compare";
    case Command::Verify: return "verify";
    case Command::Report: return "report";
  }
  return "?";
}

std::optional<Command> parse_command(std::string_view name) {
  for (Command c : {Command::Localize, Command::OverlapSweep, Command::GroupNormSweep,
                    Command::BatchNormCompare, Command::Verify, Command::Report}) {
    if (name == to_string(c)) return c;
  }
  return std::nullopt;
}

std::string to_string(Profile p) { return p == Profile::Desk ? "desk" : "paper"; }

std::optional<Profile> parse_profile(std::string_view name) {
  if (name == "desk") return Profile::Desk;
  if (name == "paper") return Profile::Paper;
  return std::nullopt;
}

ExperimentConfig default_config(Command command, Profile profile) {
  ExperimentConfig c;
  c.command = command;
  c.profile = profile;
  c.out_dir = "runs/" + to_string(command);
  const bool desk = profile == Profile::Desk;

  c.model.length = desk ? 200 : 600;
  c.model.depth = desk ? 12 : 32;
  c.model.kernel = 5;
  c.model.hidden = desk ? 32 : 64;
  c.model.norm = NormVariant::Instance;
  c.train.iterations = desk ? 20000 : 100000;
  c.train.batch_size = desk ? 16 : 32;
  c.train.learning_rate = desk ? 1e-3 : 1e-4;
  c.train.eval_interval = 100;

  c.probe.iterations = desk ? 1000 : 5000;
  c.probe.batch_size = 32;
  c.probe.learning_rate = 1e-3;
  c.probe.width = desk ? 64 : 256;
  c.samples = desk ? 10000 : 3200000;
  c.lr_grid = {c.train.learning_rate};

  switch (command) {
    case Command::Localize:
    case Command::Verify:
    case Command::Report:
      break;
    case Command::OverlapSweep: {
      c.model.depth = desk ? 10 : 32;
      c.model.padding = PaddingMode::None;
      c.model.length = 1 + 2 * receptive_field(c.model.depth, c.model.kernel);
      c.train.iterations = 10000;
      c.probes = false;
      const std::size_t step = desk ? 5 : 16;
      for (std::size_t o = 0; o < c.model.length; o += step) c.overlap_grid.push_back(o);
      break;
    }
    case Command::GroupNormSweep:
      c.model.norm = NormVariant::Group;
      c.probes = false;
      if (desk) {
        c.groups_grid = {1, 4, 32};
        c.lr_grid = {6.4e-4, 2.56e-3};
      } else {
        c.groups_grid = {1, 2, 4, 8, 16, 32, 64};
        c.lr_grid = {1e-5, 4e-5, 1.6e-4, 6.4e-4};
      }
      break;
    case Command::BatchNormCompare:
      c.model.norm = NormVariant::Batch;
      c.model.length = desk ? 120 : 250;
      c.train.batch_size = 4;
      c.train.grad_accumulation_steps = 8;
      if (!desk) c.train.iterations = 500000;
      c.probes = false;
      break;
  }
  return c;
}

void ExperimentConfig::validate() const {
  if (command == Command::Verify) {
    if (gradient_cases == 0) fail("gradient_cases must be positive");
    if (locality_seeds == 0) fail("locality_seeds must be positive");
    if (!(model.norm_epsilon >= 0.0)) fail("norm_epsilon must be non-negative");
    return;
  }
  if (command == Command::Report) return;
  try {
    model.validate();
    train.validate();
    if (probes) probe.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (!(model.norm_epsilon > 0.0)) fail("norm_epsilon must be positive");
  if (!(model.ema_momentum > 0.0 && model.ema_momentum <= 1.0)) fail("ema_momentum must lie in (0, 1]");
  if (samples < 2) fail("samples must be at least 2");
  if (sample_batch == 0 || probe_inference_batch == 0) fail("inference batch sizes must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
  if (traces > samples) fail("traces cannot exceed samples");
  if (probes && probe.batch_size % probe_inference_batch != 0) {
    fail("probe_batch must be a multiple of probe_inference_batch");
  }

  switch (command) {
    case Command::OverlapSweep:
      if (model.padding != PaddingMode::None) fail("overlap-sweep needs padding = none");
      if (!model.norm) fail("overlap-sweep needs a norm: the paths only meet in PackNorm");
      if (overlap_grid.empty()) fail("overlap_grid is empty");
      for (std::size_t o : overlap_grid) {
        if (o >= model.length) {
          fail("overlap " + std::to_string(o) + " outside [0, " + std::to_string(model.length - 1) + "]");
        }
      }
      if (eval_pairs == 0) fail("eval_pairs must be positive");
      break;
    case Command::GroupNormSweep:
      if (model.norm != NormVariant::Group) fail("groupnorm-sweep needs norm = group");
      if (groups_grid.empty()) fail("groups_grid is empty");
      for (std::size_t g : groups_grid) {
        if (g == 0 || model.hidden % g != 0) {
          fail("group count " + std::to_string(g) + " does not divide hidden = " + std::to_string(model.hidden));
        }
      }
      if (lr_grid.empty()) fail("lr_grid is empty");
      for (double lr : lr_grid) {
        if (!(lr > 0.0)) fail("lr_grid entries must be positive");
      }
      if (seed_count == 0) fail("seed_count must be positive");
      break;
    case Command::BatchNormCompare:
      if (model.norm != NormVariant::Batch) fail("batchnorm-compare needs norm = batch");
      break;
    default:
      break;
  }
  if (model.padding == PaddingMode::None && command != Command::OverlapSweep) {
    fail("padding = none is only meaningful for overlap-sweep");
  }
}

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base) {
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* f = find_field(key);
    if (!f) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      f->set(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (path.extension() != ".json") return parse_config(buf.str(), std::move(base));

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!manifest.contains("config") || !manifest["config"].is_object()) {
    throw ConfigError(path.string() + ": manifest has no config object");
  }
  std::string text;
  for (const auto& [key, value] : manifest["config"].items()) {
    if (!value.is_string()) throw ConfigError(path.string() + ": config value for " + key + " is not a string");
    text += key + " = " + value.get<std::string>() + "\n";
  }
  return parse_config(text, std::move(base));
}

std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace normprobe
