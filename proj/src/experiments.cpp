// SPDX-License-Identifier: Apache-2.0
#include "normprobe/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <ostream>

#include "json.hpp"
#include "normprobe/analysis.hpp"
#include "normprobe/checkpoint.hpp"
#include "normprobe/csv.hpp"
#include "normprobe/digest.hpp"
#include "normprobe/report.hpp"

#ifndef NORMPROBE_VERSION
#define NORMPROBE_VERSION "0.0.0"
#endif

namespace normprobe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ojson number_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

ProgressFn progress_logger(std::ostream* log, std::string tag, std::size_t total) {
  if (!log) return {};
  const std::size_t every = std::max<std::size_t>(1, total / 10);
  return [log, tag = std::move(tag), every, total](std::size_t it, double loss) {
    if (it % every == 0 || it == total) *log << tag << " iteration " << it << "/" << total << " loss " << loss << "\n";
  };
}

CsvTable loss_table(const LossTrace& trace) {
  CsvTable t{{"iteration", "mse"}, {}};
  for (const auto& [it, loss] : trace.points()) t.add_row({std::to_string(it), csv_number(loss)});
  return t;
}

double final_loss(const LossTrace& trace) { return trace.empty() ? std::nan("") : trace.last(); }

CsvTable prediction_table(const EmpiricalMarginals& m, const std::vector<bool>& localized) {
  const Tensor3f y = target_sequence(m.length());
  const auto mom = m.moments();
  CsvTable t{{"index", "target", "mean", "std", "localized"}, {}};
  for (std::size_t j = 0; j < m.length(); ++j) {
    t.add_row({std::to_string(j + 1), csv_number(y[j]), csv_number(mom[j].mean), csv_number(std::sqrt(mom[j].var)),
               localized[j] ? "1" : "0"});
  }
  return t;
}

CsvTable trace_table(const EmpiricalMarginals& m) {
  CsvTable t;
  t.header.push_back("index");
  for (std::size_t r = 0; r < m.samples(); ++r) t.header.push_back("t" + std::to_string(r));
  for (std::size_t j = 0; j < m.length(); ++j) {
    std::vector<std::string> row{std::to_string(j + 1)};
    for (float v : m.at(j)) row.push_back(csv_number(v));
    t.add_row(std::move(row));
  }
  return t;
}

CsvTable map_table(const LocalizationMap& map) {
  CsvTable t;
  t.header.push_back("depth");
  for (std::size_t j = 1; j <= map.length; ++j) t.header.push_back(std::to_string(j));
  for (std::size_t i = 0; i < map.rows.size(); ++i) {
    std::vector<std::string> row{std::to_string(i + 1)};
    for (bool b : map.rows[i]) row.push_back(b ? "1" : "0");
    t.add_row(std::move(row));
  }
  return t;
}

void write_map(const fs::path& dir, const std::string& stem, const LocalizationMap& map, const std::string& source) {
  write_csv(dir / (stem + ".csv"), map_table(map));
  ojson meta;
  meta["length"] = map.length;
  meta["depth"] = map.depth;
  meta["rows"] = map.rows.size();
  meta["samples_per_index"] = map.samples;
  meta["alpha"] = map.alpha;
  meta["bonferroni"] = map.bonferroni;
  meta["test"] = "welch two-sided";
  meta["source"] = source;
  meta["final_distance"] = map.final_distance();
  write_file(dir / (stem + ".json"), meta.dump(2) + "\n");
}

LocalizeOptions localize_options(const ExperimentConfig& cfg) { return {cfg.alpha, cfg.bonferroni}; }

double index_spearman(const EmpiricalMarginals& m) {
  const auto mom = m.moments();
  std::vector<double> mean, idx;
  for (std::size_t j = 0; j < mom.size(); ++j) {
    mean.push_back(mom[j].mean);
    idx.push_back(static_cast<double>(j + 1));
  }
  return spearman(mean, idx);
}

struct Evaluation {
  EmpiricalMarginals output;
  std::vector<bool> localized;
  std::optional<LocalizationMap> map;
  EmpiricalMarginals traces;
};

/// Output marginals, optional probe map and plotting traces of a trained model.
Evaluation evaluate(LocCnn& model, const ExperimentConfig& cfg, std::uint64_t seed, std::size_t batch,
                    std::ostream* log) {
  std::vector<Probe> probes;
  if (cfg.probes) {
    Rng probe_rng = stream_rng(seed, Stream::Probe);
    probes = train_probes(model, cfg.probe, cfg.probe_inference_batch, probe_rng,
                          progress_logger(log, "probes", cfg.probe.iterations));
  }
  Rng analysis_rng = stream_rng(seed, Stream::Analysis);
  auto mm = sample_model_marginals(model, probes, cfg.samples, batch, analysis_rng);
  Evaluation ev{std::move(mm.output), {}, std::nullopt, {}};
  ev.localized = localized_indices(ev.output, localize_options(cfg));
  if (cfg.probes) ev.map = localization_map(mm.probes, model.config().depth, localize_options(cfg));
  if (cfg.traces > 0) {
    Rng trace_rng = stream_rng(seed, Stream::Traces);
    const Predictor predict = [&](const Tensor3f& x) { return infer(model, x, false).first; };
    ev.traces = sample_marginals(predict, model.config().length, cfg.traces, batch, trace_rng, "traces");
  }
  return ev;
}

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg, const std::string& status,
                    const std::string& started, const ojson& metrics, const std::string& error = {}) {
  ojson m;
  m["format"] = "normprobe-run";
  m["manifest_version"] = 1;
  m["csv_schema"] = kCsvSchemaVersion;
  m["checkpoint_version"] = kCheckpointVersion;
  m["kind"] = to_string(cfg.command);
  m["profile"] = to_string(cfg.profile);
  m["seed"] = cfg.train.seed;
  m["version"] = code_version();
  m["started"] = started;
  m["finished"] = utc_now();
  m["status"] = status;
  if (!error.empty()) m["error"] = error;
  ojson config = ojson::object();
  for (const auto& [k, v] : config_entries(cfg)) config[k] = v;
  m["config"] = config;
  m["metrics"] = metrics;
  ojson files = ojson::array();
  std::vector<fs::path> paths;
  if (fs::exists(dir)) {
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json" && e.path().extension() != ".tmp") {
        paths.push_back(e.path());
      }
    }
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    const std::string bytes = read_file(p);
    files.push_back({{"path", fs::relative(p, dir).generic_string()}, {"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}});
  }
  m["files"] = files;
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

ojson common_metrics(const ExperimentConfig& cfg) {
  ojson m;
  m["receptive_field"] = receptive_field(cfg.model.depth, cfg.model.kernel);
  m["single_hop_reach"] = single_hop_reach(cfg.model.depth, cfg.model.kernel);
  m["samples_per_index"] = cfg.samples;
  m["traces"] = cfg.traces;
  return m;
}

void emit_plots(const fs::path& dir, const ExperimentConfig& cfg, const std::string& started, const ojson& metrics) {
  write_manifest(dir, cfg, "ok", started, metrics);
  emit_report(dir);
  write_manifest(dir, cfg, "ok", started, metrics);
}

ojson localize_metrics(const ExperimentConfig& cfg, const LocalizeResult& r) {
  ojson m = common_metrics(cfg);
  m["final_loss"] = number_or_null(r.final_loss);
  m["output_distance"] = r.output_distance;
  m["probe_distance"] = r.probe_distance ? ojson(*r.probe_distance) : ojson(nullptr);
  m["spearman"] = number_or_null(r.spearman);
  m["checkpoint_sha256"] = r.checkpoint_sha256;
  return m;
}

LocalizeResult localize_into(const ExperimentConfig& cfg, const fs::path& dir, std::ostream* log) {
  LocalizeResult res;
  auto run = train_localization(cfg.model, cfg.train, progress_logger(log, "train", cfg.train.iterations));
  res.final_loss = final_loss(run.trace);
  write_csv(dir / "loss.csv", loss_table(run.trace));
  const std::string ckpt = encode_checkpoint(capture_checkpoint(run.model, &run.optimizer));
  write_file(dir / "model.npck", ckpt);
  res.checkpoint_sha256 = sha256_hex(ckpt);

  Evaluation ev = evaluate(run.model, cfg, cfg.train.seed, cfg.sample_batch, log);
  res.output_localized = ev.localized;
  res.output_distance = localization_distance(ev.localized);
  res.spearman = index_spearman(ev.output);
  write_csv(dir / "predictions.csv", prediction_table(ev.output, ev.localized));
  write_csv(dir / "traces.csv", trace_table(ev.traces));
  if (ev.map) {
    res.probe_distance = ev.map->final_distance();
    write_map(dir, "map", *ev.map, "probes");
  }
  return res;
}

}  // namespace

std::string code_version() { return NORMPROBE_VERSION; }

LocalizeResult run_localize(const ExperimentConfig& cfg, const fs::path& dir, std::ostream* log) {
  const std::string started = utc_now();
  fs::create_directories(dir);
  LocalizeResult res = localize_into(cfg, dir, log);
  emit_plots(dir, cfg, started, localize_metrics(cfg, res));
  return res;
}

std::vector<OverlapPoint> run_overlap_sweep(const ExperimentConfig& cfg, const fs::path& dir, std::ostream* log) {
  const std::string started = utc_now();
  fs::create_directories(dir);
  std::vector<OverlapPoint> points;
  CsvTable losses{{"overlap", "iteration", "mse"}, {}};
  for (std::size_t o : cfg.overlap_grid) {
    auto run = train_overlap(cfg.model, cfg.train, o, cfg.eval_pairs,
                             progress_logger(log, "overlap " + std::to_string(o), cfg.train.iterations));
    points.push_back({o, run.final_eval_mse, final_loss(run.trace)});
    for (const auto& [it, loss] : run.trace.points()) losses.add_row({std::to_string(o), std::to_string(it), csv_number(loss)});
    save_checkpoint(dir / ("overlap_o" + std::to_string(o) + ".npck"), capture_checkpoint(run.model, &run.optimizer));
    if (log) *log << "overlap " << o << " eval mse " << run.final_eval_mse << "\n";
  }
  CsvTable table{{"overlap", "final_mse", "final_train_loss"}, {}};
  for (const auto& p : points) {
    table.add_row({std::to_string(p.overlap), csv_number(p.final_mse), csv_number(p.final_train_loss)});
  }
  write_csv(dir / "overlap.csv", table);
  write_csv(dir / "overlap_loss.csv", losses);

  ojson m = common_metrics(cfg);
  ojson mse = ojson::object();
  for (const auto& p : points) mse[std::to_string(p.overlap)] = number_or_null(p.final_mse);
  m["final_mse"] = mse;
  emit_plots(dir, cfg, started, m);
  return points;
}

GroupNormResult run_groupnorm_sweep(const ExperimentConfig& cfg, const fs::path& dir, std::ostream* log) {
  const std::string started = utc_now();
  fs::create_directories(dir);
  GroupNormResult res;
  CsvTable runs{{"groups", "learning_rate", "seed", "final_loss", "distance"}, {}};
  CsvTable best{{"groups", "seed", "best_learning_rate", "best_distance"}, {}};
  for (std::size_t g : cfg.groups_grid) {
    double sum = 0.0;
    for (std::size_t s = 0; s < cfg.seed_count; ++s) {
      const std::uint64_t seed = cfg.train.seed + s;
      std::optional<GroupBest> top;
      for (std::size_t li = 0; li < cfg.lr_grid.size(); ++li) {
        ExperimentConfig c = cfg;
        c.model.groups = g;
        c.train.learning_rate = cfg.lr_grid[li];
        c.train.seed = seed;
        const std::string tag = "G" + std::to_string(g) + "_lr" + std::to_string(li) + "_s" + std::to_string(seed);
        auto run = train_localization(c.model, c.train, progress_logger(log, tag, c.train.iterations));
        save_checkpoint(dir / (tag + ".npck"), capture_checkpoint(run.model, &run.optimizer));
        c.probes = false;
        c.traces = 0;
        const Evaluation ev = evaluate(run.model, c, seed, c.sample_batch, nullptr);
        const GroupRun r{g, c.train.learning_rate, seed, final_loss(run.trace), localization_distance(ev.localized)};
        res.runs.push_back(r);
        runs.add_row({std::to_string(g), csv_number(r.learning_rate), std::to_string(seed), csv_number(r.final_loss),
                      std::to_string(r.distance)});
        if (log) *log << tag << " distance " << r.distance << "\n";
        if (!top || r.distance > top->distance) top = GroupBest{g, seed, r.learning_rate, r.distance};
      }
      res.best.push_back(*top);
      best.add_row({std::to_string(g), std::to_string(seed), csv_number(top->learning_rate), std::to_string(top->distance)});
      sum += static_cast<double>(top->distance);
    }
    res.mean_best[g] = sum / static_cast<double>(cfg.seed_count);
  }
  CsvTable summary{{"groups", "mean_best_distance", "seeds"}, {}};
  for (const auto& [g, mean] : res.mean_best) {
    summary.add_row({std::to_string(g), csv_number(mean), std::to_string(cfg.seed_count)});
  }
  write_csv(dir / "groupnorm_runs.csv", runs);
  write_csv(dir / "groupnorm.csv", best);
  write_csv(dir / "groupnorm_summary.csv", summary);

  ojson m = common_metrics(cfg);
  ojson means = ojson::object();
  for (const auto& [g, mean] : res.mean_best) means[std::to_string(g)] = mean;
  m["mean_best_distance"] = means;
  emit_plots(dir, cfg, started, m);
  return res;
}

BatchNormResult run_batchnorm_compare(const ExperimentConfig& cfg, const fs::path& dir, std::ostream* log) {
  const std::string started = utc_now();
  fs::create_directories(dir);
  BatchNormResult res;
  const std::uint64_t seed = cfg.train.seed;
  const std::size_t batch = cfg.train.batch_size;
  CsvTable cmp{{"model", "stats_mode", "distance", "final_loss", "checkpoint_sha256"}, {}};

  {
    auto run = train_localization(cfg.model, cfg.train, progress_logger(log, "batch", cfg.train.iterations));
    res.final_loss = final_loss(run.trace);
    write_csv(dir / "loss_batch.csv", loss_table(run.trace));
    save_checkpoint(dir / "batch.npck", capture_checkpoint(run.model, &run.optimizer));
  }
  for (StatsMode mode : {StatsMode::Minibatch, StatsMode::Population}) {
    const std::string bytes = read_file(dir / "batch.npck");
    const std::string digest = sha256_hex(bytes);
    Rng init = stream_rng(seed, Stream::Init);
    LocCnn model(cfg.model, init);
    restore_checkpoint(decode_checkpoint(bytes), model, nullptr);
    model.set_stats_mode(mode);
    const std::string tag = to_string(mode);
    Evaluation ev = evaluate(model, cfg, seed, batch, log);
    const std::size_t dist = localization_distance(ev.localized);
    write_csv(dir / ("predictions_" + tag + ".csv"), prediction_table(ev.output, ev.localized));
    if (ev.map) write_map(dir, "map_" + tag, *ev.map, "probes");
    cmp.add_row({"batch", tag, std::to_string(dist), csv_number(res.final_loss), digest});
    if (mode == StatsMode::Minibatch) {
      res.minibatch_distance = dist;
      res.minibatch_checkpoint_sha256 = digest;
    } else {
      res.population_distance = dist;
      res.population_checkpoint_sha256 = digest;
    }
    if (log) *log << tag << " statistics distance " << dist << "\n";
  }
  {
    ModelConfig plain = cfg.model;
    plain.norm.reset();
    auto run = train_localization(plain, cfg.train, progress_logger(log, "norm-free", cfg.train.iterations));
    write_csv(dir / "loss_normfree.csv", loss_table(run.trace));
    const std::string ckpt = encode_checkpoint(capture_checkpoint(run.model, &run.optimizer));
    write_file(dir / "normfree.npck", ckpt);
    Evaluation ev = evaluate(run.model, cfg, seed, batch, log);
    res.normfree_distance = localization_distance(ev.localized);
    write_csv(dir / "predictions_normfree.csv", prediction_table(ev.output, ev.localized));
    if (ev.map) write_map(dir, "map_normfree", *ev.map, "probes");
    cmp.add_row({"none", "none", std::to_string(res.normfree_distance), csv_number(final_loss(run.trace)), sha256_hex(ckpt)});
    if (log) *log << "norm-free distance " << res.normfree_distance << "\n";
  }
  write_csv(dir / "comparison.csv", cmp);

  ojson m = common_metrics(cfg);
  m["final_loss"] = number_or_null(res.final_loss);
  m["minibatch_distance"] = res.minibatch_distance;
  m["population_distance"] = res.population_distance;
  m["normfree_distance"] = res.normfree_distance;
  m["same_checkpoint"] = res.minibatch_checkpoint_sha256 == res.population_checkpoint_sha256;
  emit_plots(dir, cfg, started, m);
  return res;
}

std::vector<CheckResult> run_verify(const ExperimentConfig& cfg, const fs::path& dir, std::ostream* log) {
  const std::string started = utc_now();
  fs::create_directories(dir);
  VerifyOptions opts;
  opts.f64 = cfg.verify_f64;
  opts.norm_epsilon = cfg.model.norm_epsilon;
  opts.seed = cfg.train.seed;
  opts.gradient_cases = cfg.gradient_cases;
  opts.locality_seeds = cfg.locality_seeds;
  const auto checks = verify_all(opts);
  CsvTable t{{"suite", "name", "passed", "value", "tolerance", "detail"}, {}};
  std::size_t failed = 0;
  for (const auto& c : checks) {
    t.add_row({c.suite, c.name, c.passed ? "1" : "0", csv_number(c.value), csv_number(c.tolerance), csv_field(c.detail)});
    failed += c.passed ? 0 : 1;
    if (log) {
      *log << (c.passed ? "PASS " : "FAIL ") << c.suite << "." << c.name << " value=" << c.value
           << " tolerance=" << c.tolerance << (c.detail.empty() ? "" : " (" + c.detail + ")") << "\n";
    }
  }
  write_csv(dir / "verify.csv", t);
  ojson m;
  m["checks"] = checks.size();
  m["failed"] = failed;
  m["gradient_tolerance"] = gradient_tolerance(cfg.verify_f64);
  write_manifest(dir, cfg, failed == 0 ? "ok" : "verification_failed", started, m);
  return checks;
}

int execute(const ExperimentConfig& cfg, const fs::path& dir, std::ostream& log) {
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  const std::string started = utc_now();
  try {
    switch (cfg.command) {
      case Command::Localize: {
        const auto r = run_localize(cfg, dir, &log);
        log << "output distance " << r.output_distance << ", spearman " << r.spearman << "\n";
        return kExitOk;
      }
      case Command::OverlapSweep:
        run_overlap_sweep(cfg, dir, &log);
        return kExitOk;
      case Command::GroupNormSweep:
        run_groupnorm_sweep(cfg, dir, &log);
        return kExitOk;
      case Command::BatchNormCompare:
        run_batchnorm_compare(cfg, dir, &log);
        return kExitOk;
      case Command::Verify: {
        const auto checks = run_verify(cfg, dir, &log);
        const bool ok = std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
        return ok ? kExitOk : kExitVerify;
      }
      case Command::Report:
        for (const auto& p : emit_report(dir)) log << "wrote " << p.string() << "\n";
        return kExitOk;
    }
  } catch (const NonFiniteError& e) {
    log << "non-finite loss: " << e.what() << "\n";
    write_manifest(dir, cfg, "non_finite", started, ojson::object(), e.what());
    return kExitRuntime;
  } catch (const CsvError& e) {
    log << "report error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    log << "runtime failure: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace normprobe
