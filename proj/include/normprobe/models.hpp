// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "normprobe/norm.hpp"
#include "normprobe/rng.hpp"
#include "normprobe/tape.hpp"

namespace normprobe {

enum class PaddingMode { SameZero, None };

std::string to_string(PaddingMode mode);

/// One-sided receptive field floor(k/2) * depth of `depth` stacked convolutions.
std::size_t receptive_field(std::size_t depth, std::size_t kernel);
/// Farthest reach of one overlap message-passing step: 3 * receptive_field.
std::size_t single_hop_reach(std::size_t depth, std::size_t kernel);

struct ModelConfig {
  std::size_t length = 200;  // sequence length
  std::size_t depth = 12;    // convolutions in total, C_in and C_out included
  std::size_t kernel = 5;
  std::size_t hidden = 32;
  std::optional<NormVariant> norm;  // applied after every intermediate convolution
  std::size_t groups = 1;           // GroupNorm only
  double norm_epsilon = 1e-5;
  double ema_momentum = 0.1;
  PaddingMode padding = PaddingMode::SameZero;

  void validate() const;
  std::size_t pad() const { return padding == PaddingMode::SameZero ? kernel / 2 : 0; }
};

struct ConvParams {
  Tensor3f weight;  // (Cout, Cin, k)
  Tensor3f bias;    // (Cout, 1, 1)
};

/// Localization CNN: C_in (1 -> h), depth - 2 blocks of conv -> norm -> ReLU
/// (h -> h), then C_out (h -> 1). Also drives the two-path overlap network,
/// where every intermediate norm becomes a PackNorm shared by both paths.
class LocCnn {
 public:
  /// Conv weights uniform in +-sqrt(1 / (Cin * k)), zero biases, unit gamma.
  LocCnn(const ModelConfig& config, Rng& init_rng);

  const ModelConfig& config() const { return config_; }

  /// Stable order: conv weights and biases layer by layer, then norm affines.
  std::vector<std::pair<std::string, Tensor3f*>> named_parameters();
  std::vector<Tensor3f*> parameters();
  std::vector<NormSpec<float>>& norms() { return norms_; }
  const std::vector<NormSpec<float>>& norms() const { return norms_; }
  std::vector<ConvParams>& convs() { return convs_; }

  struct Output {
    Var prediction;                     // (N, 1, S_out)
    std::vector<Tensor3f> activations;  // z^(1) .. z^(d-1), detached; empty unless captured
  };

  /// x is (N, 1, length).
  Output forward(Tape<float>& tape, Var x, bool training, bool capture = false);

  /// Two weight-shared paths over x and x_tilde (each (N, 1, length)),
  /// coupled only through PackNorm; returns (N, 1, 2).
  /// Requires PaddingMode::None and length = 1 + 2 * receptive_field.
  Var forward_overlap(Tape<float>& tape, Var x, Var x_tilde);

  void set_stats_mode(StatsMode mode);

 private:
  ModelConfig config_;
  std::vector<ConvParams> convs_;
  std::vector<NormSpec<float>> norms_;
};

/// ReLU MLP probe h -> width -> width -> 1 attached at one depth.
class Probe {
 public:
  Probe(std::size_t input_width, std::size_t hidden_width, std::size_t depth_index, Rng& init_rng);

  std::size_t input_width() const { return input_width_; }
  std::size_t depth_index() const { return depth_index_; }

  /// rows (R, h, 1) -> (R, 1, 1).
  Var forward(Tape<float>& tape, Var rows);
  /// Scalar readout of one activation column.
  float evaluate(std::span<const float> column);

  std::vector<std::pair<std::string, Tensor3f*>> named_parameters();
  std::vector<Tensor3f*> parameters();

 private:
  std::size_t input_width_;
  std::size_t depth_index_;
  std::vector<ConvParams> layers_;  // weights (out, in, 1)
};

/// (N, h, S) activations -> (N * S, h, 1) rows, row n * S + j holding column j of sample n.
Tensor3f columns_to_rows(const Tensor3f& activations);

/// y_i = (i - 1) / (length - 1) - 1/2 for i = 1..length, as (1, 1, length).
Tensor3f target_sequence(std::size_t length);

/// Gaussian pair sharing an overlap: x_tilde[i] = x[length - overlap + i]
/// for i < overlap, the rest fresh. Each is (1, 1, length).
std::pair<Tensor3f, Tensor3f> make_overlap_pair(Rng& rng, std::size_t length, std::size_t overlap);
/// `batch` independent pairs stacked as (batch, 1, length) each.
std::pair<Tensor3f, Tensor3f> make_overlap_batch(Rng& rng, std::size_t batch, std::size_t length,
                                                 std::size_t overlap);

}  // namespace normprobe
