// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "normprobe/adam.hpp"
#include "normprobe/models.hpp"

namespace normprobe {

struct TrainConfig {
  std::size_t iterations = 20000;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  std::size_t grad_accumulation_steps = 1;
  std::uint64_t seed = 0;
  std::size_t eval_interval = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
  std::size_t effective_batch() const { return batch_size * grad_accumulation_steps; }
  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_epsilon}; }
};

struct ProbeConfig {
  std::size_t iterations = 5000;
  std::size_t batch_size = 32;  // sequences per step
  double learning_rate = 1e-3;
  std::size_t width = 256;

  void validate() const;
};

/// (iteration, mse) pairs with strictly increasing iterations.
class LossTrace {
 public:
  void add(std::size_t iteration, double loss);
  const std::vector<std::pair<std::size_t, double>>& points() const { return points_; }
  bool empty() const { return points_.empty(); }
  double last() const { return points_.back().second; }

 private:
  std::vector<std::pair<std::size_t, double>> points_;
};

/// Called after every optimizer step with (iteration, mean micro-batch loss).
using ProgressFn = std::function<void(std::size_t, double)>;

// Independent Rng streams derived from TrainConfig::seed.
enum class Stream : std::uint64_t { Init = 0, Data = 1, Probe = 2, Analysis = 3, Eval = 4, Traces = 5 };
Rng stream_rng(std::uint64_t seed, Stream stream);

struct LocalizationRun {
  LocCnn model;
  AdamState<float> optimizer;
  LossTrace trace;
};

/// Population risk minimization of ||f(x) - y||^2 over fresh Gaussian
/// batches. Micro-batch losses are scaled by 1 / grad_accumulation_steps
/// before backward so one step sees the mean over the effective batch.
/// Throws NonFiniteError on a NaN/Inf loss.
LocalizationRun train_localization(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                   const ProgressFn& progress = {});

/// Continues training an existing run for `iterations` more steps.
void continue_localization(LocalizationRun& run, const TrainConfig& train_cfg, Rng& data_rng,
                           std::size_t iterations, const ProgressFn& progress = {});

struct OverlapRun {
  LocCnn model;
  AdamState<float> optimizer;
  LossTrace trace;
  double final_eval_mse = 0.0;
};

/// Regresses the two-path network onto [-1, 1] over fresh overlap pairs;
/// the final MSE is measured on `eval_pairs` held-out pairs.
OverlapRun train_overlap(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                         std::size_t overlap, std::size_t eval_pairs = 1000,
                         const ProgressFn& progress = {});

/// Mean overlap-task MSE of `model` on `pairs` fresh pairs from `rng`.
double evaluate_overlap(LocCnn& model, std::size_t overlap, std::size_t pairs, Rng& rng);

/// Mean squared error value, no tape involved.
double mse(const Tensor3f& pred, const Tensor3f& target);

/// One probe per captured activation (d - 1 of them), each trained by MSE
/// to map activation columns at index j to y_j. The network runs in
/// inference mode in batches of `inference_batch` sequences and its
/// parameters are never written.
std::vector<Probe> train_probes(LocCnn& model, const ProbeConfig& cfg, std::size_t inference_batch,
                                Rng& rng, const ProgressFn& progress = {});

/// Runs the network without recording gradients: (prediction, activations).
std::pair<Tensor3f, std::vector<Tensor3f>> infer(LocCnn& model, const Tensor3f& x, bool capture);

}  // namespace normprobe
