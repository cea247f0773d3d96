// SPDX-License-Identifier: Apache-2.0
//
// Spatially pooled normalization layers over (N, C, S) tensors.
//
// Each output element is gamma_c * (z - mu) / sqrt(var + eps) + beta_c with
// (mu, var) the population moments over the element's pooling set:
//   Batch     all (n, s) for the element's channel
//   Layer     all (c, s) for the element's sample
//   Instance  all s for the element's (sample, channel)
//   Group     all s and the K = C / G channels of the element's group
// Gradients flow through mu and var, which is what couples distant
// positions.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include "normprobe/tape.hpp"

namespace normprobe {

enum class NormVariant { Batch, Layer, Instance, Group };
enum class StatsMode { Minibatch, Population };

std::string to_string(NormVariant v);
std::optional<NormVariant> parse_norm_variant(const std::string& name);
std::string to_string(StatsMode m);

/// Normalization layer configuration plus its learnable and running state.
template <typename T>
struct NormSpec {
  NormVariant variant = NormVariant::Instance;
  std::size_t groups = 1;  // Group only
  double epsilon = 1e-5;
  Tensor3<T> gamma;  // (C, 1, 1)
  Tensor3<T> beta;   // (C, 1, 1)

  // Batch only.
  double ema_momentum = 0.1;
  Tensor3<T> running_mean;  // (C, 1, 1), starts at 0
  Tensor3<T> running_var;   // (C, 1, 1), starts at 1, tracks the unbiased variance
  std::uint64_t ema_updates = 0;
  StatsMode stats_mode = StatsMode::Minibatch;

  /// gamma = 1, beta = 0, learnable.
  static NormSpec make(NormVariant variant, std::size_t channels, std::size_t groups = 1,
                       double epsilon = 1e-5);

  std::size_t channels() const { return gamma.size(); }
  /// Throws ShapeError if the spec cannot normalize `channels` channels.
  void validate(std::size_t channels) const;
  /// Groups actually used when pooling (1 for Layer, C for Instance).
  std::size_t effective_groups() const;
};

/// Applies the layer. With `training` set, BatchNorm folds the batch moments
/// into its running statistics. BatchNorm outside training uses running
/// statistics only when stats_mode is Population; that path throws
/// std::logic_error if no EMA update has happened yet.
template <typename T>
Var norm_forward(Tape<T>& tape, Var z, NormSpec<T>& spec, bool training);

/// InstanceNorm over the sequence formed by joining u and u_tilde end to
/// end, split back into the two halves. The only coupling between the two
/// paths of the overlap network. Ignores spec.variant.
template <typename T>
std::pair<Var, Var> packnorm_forward(Tape<T>& tape, Var u, Var u_tilde, NormSpec<T>& spec);

/// Same as packnorm_forward on a batch that stacks u (first half) over
/// u_tilde (second half); avoids the concat/split copies.
template <typename T>
Var packnorm_stacked(Tape<T>& tape, Var stacked, NormSpec<T>& spec);

}  // namespace normprobe
