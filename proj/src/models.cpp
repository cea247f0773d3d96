// SPDX-License-Identifier: Apache-2.0
#include "normprobe/models.hpp"

#include <cmath>
#include <stdexcept>

#include "normprobe/ops.hpp"

namespace normprobe {

std::string to_string(PaddingMode mode) {
  return mode == PaddingMode::SameZero ? "same_zero" : "none";
}

std::size_t receptive_field(std::size_t depth, std::size_t kernel) {
  if (kernel % 2 == 0) throw std::invalid_argument("receptive_field: kernel size must be odd");
  if (depth < 1) throw std::invalid_argument("receptive_field: depth must be at least 1");
  return (kernel / 2) * depth;
}

std::size_t single_hop_reach(std::size_t depth, std::size_t kernel) {
  return 3 * receptive_field(depth, kernel);
}

void ModelConfig::validate() const {
  if (kernel % 2 == 0) throw std::invalid_argument("model: kernel size must be odd");
  if (depth < 2) throw std::invalid_argument("model: depth must be at least 2");
  if (hidden == 0) throw std::invalid_argument("model: hidden width must be positive");
  if (padding == PaddingMode::None && length != 1 + 2 * receptive_field(depth, kernel)) {
    throw std::invalid_argument("model: unpadded networks need length = 1 + 2 * R(d) = " +
                                std::to_string(1 + 2 * receptive_field(depth, kernel)));
  }
  if (padding == PaddingMode::SameZero && length < 2) {
    throw std::invalid_argument("model: sequence length must be at least 2");
  }
  if (norm == NormVariant::Group && (groups == 0 || hidden % groups != 0)) {
    throw std::invalid_argument("model: group count " + std::to_string(groups) +
                                " does not divide hidden width " + std::to_string(hidden));
  }
}

namespace {

ConvParams make_conv(std::size_t cout, std::size_t cin, std::size_t k, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(cin * k));
  ConvParams p{uniform<float>(rng, Shape3{cout, cin, k}, -bound, bound),
               Tensor3f(Shape3{cout, 1, 1}, 0.0f)};
  p.weight.set_requires_grad(true);
  p.bias.set_requires_grad(true);
  return p;
}

// (2N, 1, 1) stacked path outputs -> (N, 1, 2).
Var pair_paths(Tape<float>& tape, Var stacked) {
  const Shape3 s = tape.shape(stacked);
  const std::size_t half = s.n / 2;
  const auto v = tape.value(stacked).data();
  Tensor3f out(Shape3{half, 1, 2});
  for (std::size_t n = 0; n < half; ++n) {
    out(n, 0, 0) = v[n];
    out(n, 0, 1) = v[half + n];
  }
  return tape.record(std::move(out), tape.needs_grad(stacked),
                     [=](Tape<float>& t, std::span<const float> g) {
                       auto gx = t.grad(stacked);
                       for (std::size_t n = 0; n < half; ++n) {
                         gx[n] += g[2 * n];
                         gx[half + n] += g[2 * n + 1];
                       }
                     });
}

}  // namespace

LocCnn::LocCnn(const ModelConfig& config, Rng& init_rng) : config_(config) {
  config_.validate();
  const std::size_t h = config_.hidden;
  const std::size_t k = config_.kernel;
  convs_.reserve(config_.depth);
  convs_.push_back(make_conv(h, 1, k, init_rng));
  for (std::size_t i = 0; i + 2 < config_.depth; ++i) convs_.push_back(make_conv(h, h, k, init_rng));
  convs_.push_back(make_conv(1, h, k, init_rng));
  if (config_.norm) {
    for (std::size_t i = 0; i + 2 < config_.depth; ++i) {
      auto spec = NormSpec<float>::make(*config_.norm, h, config_.groups, config_.norm_epsilon);
      spec.ema_momentum = config_.ema_momentum;
      norms_.push_back(std::move(spec));
    }
  }
}

std::vector<std::pair<std::string, Tensor3f*>> LocCnn::named_parameters() {
  std::vector<std::pair<std::string, Tensor3f*>> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    out.emplace_back("conv" + std::to_string(i) + ".weight", &convs_[i].weight);
    out.emplace_back("conv" + std::to_string(i) + ".bias", &convs_[i].bias);
  }
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    out.emplace_back("norm" + std::to_string(i) + ".gamma", &norms_[i].gamma);
    out.emplace_back("norm" + std::to_string(i) + ".beta", &norms_[i].beta);
  }
  return out;
}

std::vector<Tensor3f*> LocCnn::parameters() {
  std::vector<Tensor3f*> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void LocCnn::set_stats_mode(StatsMode mode) {
  for (auto& n : norms_) n.stats_mode = mode;
}

LocCnn::Output LocCnn::forward(Tape<float>& tape, Var x, bool training, bool capture) {
  const Shape3 xs = tape.shape(x);
  if (xs.c != 1 || xs.s != config_.length) {
    throw ShapeError("forward: expected input (N, 1, " + std::to_string(config_.length) +
                     "), got " + to_string(xs));
  }
  const std::size_t pad = config_.pad();
  Output out;
  auto conv = [&](Var in, ConvParams& p) {
    return conv1d(tape, in, tape.leaf(p.weight), tape.leaf(p.bias), pad);
  };
  Var z = conv(x, convs_.front());
  if (capture) out.activations.push_back(tape.value(z).detached());
  for (std::size_t i = 1; i + 1 < convs_.size(); ++i) {
    Var u = conv(z, convs_[i]);
    if (!norms_.empty()) u = norm_forward(tape, u, norms_[i - 1], training);
    z = relu(tape, u);
    if (capture) out.activations.push_back(tape.value(z).detached());
  }
  out.prediction = conv(z, convs_.back());
  return out;
}

Var LocCnn::forward_overlap(Tape<float>& tape, Var x, Var x_tilde) {
  if (config_.padding != PaddingMode::None) {
    throw std::invalid_argument("forward_overlap: network must be unpadded");
  }
  const Shape3 xs = tape.shape(x);
  if (xs != tape.shape(x_tilde) || xs.c != 1 || xs.s != config_.length) {
    throw ShapeError("forward_overlap: both inputs must be (N, 1, " +
                     std::to_string(config_.length) + ")");
  }
  auto conv = [&](Var in, ConvParams& p) {
    return conv1d(tape, in, tape.leaf(p.weight), tape.leaf(p.bias), 0);
  };
  Var z = conv(concat_batch(tape, x, x_tilde), convs_.front());
  for (std::size_t i = 1; i + 1 < convs_.size(); ++i) {
    Var u = conv(z, convs_[i]);
    if (!norms_.empty()) u = packnorm_stacked(tape, u, norms_[i - 1]);
    z = relu(tape, u);
  }
  return pair_paths(tape, conv(z, convs_.back()));
}

Probe::Probe(std::size_t input_width, std::size_t hidden_width, std::size_t depth_index,
             Rng& init_rng)
    : input_width_(input_width), depth_index_(depth_index) {
  const std::size_t widths[] = {input_width, hidden_width, hidden_width, 1};
  for (std::size_t i = 0; i < 3; ++i) layers_.push_back(make_conv(widths[i + 1], widths[i], 1, init_rng));
}

Var Probe::forward(Tape<float>& tape, Var rows) {
  if (tape.shape(rows).c != input_width_) {
    throw ShapeError("probe: expected width " + std::to_string(input_width_) + ", got " +
                     std::to_string(tape.shape(rows).c));
  }
  Var h = rows;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = linear(tape, h, tape.leaf(layers_[i].weight), tape.leaf(layers_[i].bias));
    if (i + 1 < layers_.size()) h = relu(tape, h);
  }
  return h;
}

float Probe::evaluate(std::span<const float> column) {
  if (column.size() != input_width_) {
    throw ShapeError("probe: expected width " + std::to_string(input_width_) + ", got " +
                     std::to_string(column.size()));
  }
  Tape<float> tape;
  const Var rows = tape.constant(
      Tensor3f(Shape3{1, input_width_, 1}, std::vector<float>(column.begin(), column.end())));
  return tape.value(forward(tape, rows))[0];
}

std::vector<std::pair<std::string, Tensor3f*>> Probe::named_parameters() {
  std::vector<std::pair<std::string, Tensor3f*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.emplace_back("fc" + std::to_string(i) + ".weight", &layers_[i].weight);
    out.emplace_back("fc" + std::to_string(i) + ".bias", &layers_[i].bias);
  }
  return out;
}

std::vector<Tensor3f*> Probe::parameters() {
  std::vector<Tensor3f*> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

Tensor3f columns_to_rows(const Tensor3f& activations) {
  const Shape3 s = activations.shape();
  Tensor3f rows(Shape3{s.n * s.s, s.c, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t j = 0; j < s.s; ++j) rows[(n * s.s + j) * s.c + c] = activations(n, c, j);
    }
  }
  return rows;
}

Tensor3f target_sequence(std::size_t length) {
  if (length < 2) throw std::invalid_argument("target_sequence: length must be at least 2");
  Tensor3f y(Shape3{1, 1, length});
  for (std::size_t i = 0; i < length; ++i) {
    y[i] = static_cast<float>(static_cast<double>(i) / static_cast<double>(length - 1) - 0.5);
  }
  return y;
}

std::pair<Tensor3f, Tensor3f> make_overlap_batch(Rng& rng, std::size_t batch, std::size_t length,
                                                 std::size_t overlap) {
  if (overlap > length) {
    throw std::invalid_argument("make_overlap_pair: overlap " + std::to_string(overlap) +
                                " exceeds length " + std::to_string(length));
  }
  Tensor3f x(Shape3{batch, 1, length});
  Tensor3f xt(Shape3{batch, 1, length});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < length; ++i) x(n, 0, i) = static_cast<float>(rng.normal());
    for (std::size_t i = 0; i < overlap; ++i) xt(n, 0, i) = x(n, 0, length - overlap + i);
    for (std::size_t i = overlap; i < length; ++i) xt(n, 0, i) = static_cast<float>(rng.normal());
  }
  return {std::move(x), std::move(xt)};
}

std::pair<Tensor3f, Tensor3f> make_overlap_pair(Rng& rng, std::size_t length, std::size_t overlap) {
  return make_overlap_batch(rng, 1, length, overlap);
}

}  // namespace normprobe
