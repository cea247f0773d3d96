// SPDX-License-Identifier: Apache-2.0
#include "normprobe/training.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "normprobe/ops.hpp"

namespace normprobe {

void TrainConfig::validate() const {
  if (batch_size == 0 || grad_accumulation_steps == 0 || eval_interval == 0) {
    throw std::invalid_argument("train: batch_size, grad_accumulation_steps and eval_interval must be positive");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
}

void ProbeConfig::validate() const {
  if (batch_size == 0 || width == 0) throw std::invalid_argument("probe: batch_size and width must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("probe: learning_rate must be positive");
}

void LossTrace::add(std::size_t iteration, double loss) {
  if (!points_.empty() && iteration <= points_.back().first) {
    throw std::logic_error("loss trace iterations must be strictly increasing");
  }
  points_.emplace_back(iteration, loss);
}

Rng stream_rng(std::uint64_t seed, Stream stream) {
  return Rng(seed).fork(static_cast<std::uint64_t>(stream));
}

double mse(const Tensor3f& pred, const Tensor3f& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse: shape mismatch " + to_string(pred.shape()) + " vs " +
                     to_string(target.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

namespace {

Tensor3f tiled_target(std::size_t batch, std::size_t length) {
  const Tensor3f y = target_sequence(length);
  Tensor3f out(Shape3{batch, 1, length});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < length; ++j) out(n, 0, j) = y[j];
  }
  return out;
}

Tensor3f overlap_target(std::size_t batch) {
  Tensor3f out(Shape3{batch, 1, 2});
  for (std::size_t n = 0; n < batch; ++n) {
    out(n, 0, 0) = -1.0f;
    out(n, 0, 1) = 1.0f;
  }
  return out;
}

void zero_grads(const std::vector<Tensor3f*>& params) {
  for (auto* p : params) p->zero_grad();
}

// Interval-averaged loss logging shared by the training loops.
class TraceLogger {
 public:
  TraceLogger(LossTrace& trace, std::size_t interval) : trace_(trace), interval_(interval) {}

  void record(std::size_t iteration, double loss, bool last) {
    sum_ += loss;
    ++count_;
    if (iteration % interval_ == 0 || last) {
      trace_.add(iteration, sum_ / static_cast<double>(count_));
      sum_ = 0.0;
      count_ = 0;
    }
  }

 private:
  LossTrace& trace_;
  std::size_t interval_;
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

void check_loss(double loss, std::size_t iteration) {
  if (!std::isfinite(loss)) {
    throw NonFiniteError("training diverged: non-finite loss at iteration " + std::to_string(iteration));
  }
}

}  // namespace

void continue_localization(LocalizationRun& run, const TrainConfig& cfg, Rng& data_rng,
                           std::size_t iterations, const ProgressFn& progress) {
  cfg.validate();
  LocCnn& model = run.model;
  const std::size_t length = model.config().length;
  const Tensor3f target = tiled_target(cfg.batch_size, length);
  const auto params = model.parameters();
  const float micro_scale = 1.0f / static_cast<float>(cfg.grad_accumulation_steps);
  TraceLogger logger(run.trace, cfg.eval_interval);

  for (std::size_t it = 0; it < iterations; ++it) {
    const std::size_t iteration = static_cast<std::size_t>(run.optimizer.step) + 1;
    zero_grads(params);
    double loss_sum = 0.0;
    for (std::size_t micro = 0; micro < cfg.grad_accumulation_steps; ++micro) {
      Tape<float> tape;
      const Var x = tape.constant(gaussian<float>(data_rng, Shape3{cfg.batch_size, 1, length}));
      const Var y = tape.constant(target);
      const auto out = model.forward(tape, x, /*training=*/true);
      const Var loss = mse(tape, out.prediction, y);
      loss_sum += tape.value(loss)[0];
      tape.backward(scale(tape, loss, micro_scale));
    }
    const double loss = loss_sum / static_cast<double>(cfg.grad_accumulation_steps);
    check_loss(loss, iteration);
    adam_step(params, run.optimizer);
    logger.record(iteration, loss, it + 1 == iterations);
    if (progress) progress(iteration, loss);
  }
}

LocalizationRun train_localization(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                   const ProgressFn& progress) {
  train_cfg.validate();
  Rng init = stream_rng(train_cfg.seed, Stream::Init);
  LocCnn model(model_cfg, init);
  AdamState<float> state(train_cfg.adam(), model.parameters());
  LocalizationRun run{std::move(model), std::move(state), {}};
  Rng data = stream_rng(train_cfg.seed, Stream::Data);
  continue_localization(run, train_cfg, data, train_cfg.iterations, progress);
  return run;
}

double evaluate_overlap(LocCnn& model, std::size_t overlap, std::size_t pairs, Rng& rng) {
  constexpr std::size_t kChunk = 128;
  double sq = 0.0;
  std::size_t done = 0;
  while (done < pairs) {
    const std::size_t b = std::min(kChunk, pairs - done);
    auto [x, xt] = make_overlap_batch(rng, b, model.config().length, overlap);
    Tape<float> tape;
    const Var pred = model.forward_overlap(tape, tape.constant(std::move(x)), tape.constant(std::move(xt)));
    sq += mse(tape.value(pred), overlap_target(b)) * static_cast<double>(2 * b);
    done += b;
  }
  return sq / static_cast<double>(2 * pairs);
}

OverlapRun train_overlap(const ModelConfig& model_cfg, const TrainConfig& cfg, std::size_t overlap,
                         std::size_t eval_pairs, const ProgressFn& progress) {
  cfg.validate();
  model_cfg.validate();
  if (model_cfg.padding != PaddingMode::None) {
    throw std::invalid_argument("train_overlap: the overlap network must be unpadded");
  }
  if (overlap >= model_cfg.length) {
    throw std::invalid_argument("train_overlap: overlap must be below the sequence length");
  }
  Rng init = stream_rng(cfg.seed, Stream::Init);
  LocCnn model(model_cfg, init);
  AdamState<float> state(cfg.adam(), model.parameters());
  OverlapRun run{std::move(model), std::move(state), {}, 0.0};

  Rng data = stream_rng(cfg.seed, Stream::Data);
  const Tensor3f target = overlap_target(cfg.batch_size);
  const auto params = run.model.parameters();
  const float micro_scale = 1.0f / static_cast<float>(cfg.grad_accumulation_steps);
  TraceLogger logger(run.trace, cfg.eval_interval);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const std::size_t iteration = it + 1;
    zero_grads(params);
    double loss_sum = 0.0;
    for (std::size_t micro = 0; micro < cfg.grad_accumulation_steps; ++micro) {
      auto [x, xt] = make_overlap_batch(data, cfg.batch_size, model_cfg.length, overlap);
      Tape<float> tape;
      const Var pred = run.model.forward_overlap(tape, tape.constant(std::move(x)),
                                                 tape.constant(std::move(xt)));
      const Var loss = mse(tape, pred, tape.constant(target));
      loss_sum += tape.value(loss)[0];
      tape.backward(scale(tape, loss, micro_scale));
    }
    const double loss = loss_sum / static_cast<double>(cfg.grad_accumulation_steps);
    check_loss(loss, iteration);
    adam_step(params, run.optimizer);
    logger.record(iteration, loss, iteration == cfg.iterations);
    if (progress) progress(iteration, loss);
  }

  Rng eval = stream_rng(cfg.seed, Stream::Eval);
  run.final_eval_mse = evaluate_overlap(run.model, overlap, eval_pairs, eval);
  return run;
}

std::pair<Tensor3f, std::vector<Tensor3f>> infer(LocCnn& model, const Tensor3f& x, bool capture) {
  Tape<float> tape;
  auto out = model.forward(tape, tape.constant(x), /*training=*/false, capture);
  return {tape.value(out.prediction).detached(), std::move(out.activations)};
}

std::vector<Probe> train_probes(LocCnn& model, const ProbeConfig& cfg, std::size_t inference_batch,
                                Rng& rng, const ProgressFn& progress) {
  cfg.validate();
  if (inference_batch == 0 || cfg.batch_size % inference_batch != 0) {
    throw std::invalid_argument("train_probes: probe batch must be a multiple of the inference batch");
  }
  const ModelConfig& mc = model.config();
  const std::size_t depths = mc.depth - 1;
  const std::size_t length = mc.length;

  std::vector<Probe> probes;
  std::vector<AdamState<float>> states;
  probes.reserve(depths);
  for (std::size_t i = 0; i < depths; ++i) {
    probes.emplace_back(mc.hidden, cfg.width, i + 1, rng);
    states.emplace_back(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8}, probes.back().parameters());
  }

  const Tensor3f y = target_sequence(length);
  Tensor3f row_target(Shape3{cfg.batch_size * length, 1, 1});
  for (std::size_t n = 0; n < cfg.batch_size; ++n) {
    for (std::size_t j = 0; j < length; ++j) row_target[n * length + j] = y[j];
  }

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<std::vector<float>> stacked(depths);
    for (std::size_t done = 0; done < cfg.batch_size; done += inference_batch) {
      const Tensor3f x = gaussian<float>(rng, Shape3{inference_batch, 1, length});
      auto [pred, acts] = infer(model, x, /*capture=*/true);
      for (std::size_t i = 0; i < depths; ++i) {
        stacked[i].insert(stacked[i].end(), acts[i].data().begin(), acts[i].data().end());
      }
    }
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < depths; ++i) {
      const Tensor3f act(Shape3{cfg.batch_size, mc.hidden, length}, std::move(stacked[i]));
      Tape<float> tape;
      const Var rows = tape.constant(columns_to_rows(act));
      const Var loss = mse(tape, probes[i].forward(tape, rows), tape.constant(row_target));
      const double value = tape.value(loss)[0];
      check_loss(value, it + 1);
      loss_sum += value;
      const auto params = probes[i].parameters();
      zero_grads(params);
      tape.backward(loss);
      adam_step(params, states[i]);
    }
    if (progress) progress(it + 1, loss_sum / static_cast<double>(depths));
  }
  return probes;
}

}  // namespace normprobe
