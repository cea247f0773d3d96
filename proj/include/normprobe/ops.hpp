// SPDX-License-Identifier: Apache-2.0
//
// Differentiable elementwise, convolution, and reduction ops.
// Every op records itself on the tape and returns the output handle.
#pragma once

#include <cstddef>
#include <utility>

#include "normprobe/tape.hpp"

namespace normprobe {

/// 1D cross-correlation with zero padding and unit stride.
/// x (N, Cin, S), weight (Cout, Cin, k), bias with Cout entries.
/// Output length is S + 2 * padding - k + 1.
template <typename T>
Var conv1d(Tape<T>& tape, Var x, Var weight, Var bias, std::size_t padding);

/// max(0, x); the subgradient at exactly 0 is 0.
template <typename T>
Var relu(Tape<T>& tape, Var x);

/// Affine map over rows: x (rows, in, 1), weight (out, in, 1), bias with
/// `out` entries -> (rows, out, 1).
template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias);

/// Mean of squared differences over every element (batch included).
template <typename T>
Var mse(Tape<T>& tape, Var pred, Var target);

template <typename T>
Var sum(Tape<T>& tape, Var x);

template <typename T>
Var mean(Tape<T>& tape, Var x);

/// Sum of the elementwise product, a scalar.
template <typename T>
Var dot(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor);

/// Stacks two same-shape tensors along the batch axis.
template <typename T>
Var concat_batch(Tape<T>& tape, Var a, Var b);

/// Splits an even batch into its first and second halves.
template <typename T>
std::pair<Var, Var> split_batch(Tape<T>& tape, Var x);

}  // namespace normprobe
