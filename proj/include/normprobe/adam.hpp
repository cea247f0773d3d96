// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "normprobe/tensor.hpp"

namespace normprobe {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Moment buffers and step counter for a fixed parameter list.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor3<T>> first_moment;
  std::vector<Tensor3<T>> second_moment;

  AdamState() = default;
  AdamState(AdamConfig cfg, const std::vector<Tensor3<T>*>& params);
};

/// One bias-corrected Adam update using each parameter's accumulated grad
/// (a parameter that never received a gradient is left untouched).
/// Throws NonFiniteError, leaving every parameter untouched, if any
/// gradient is NaN or infinite.
template <typename T>
void adam_step(const std::vector<Tensor3<T>*>& params, AdamState<T>& state);

}  // namespace normprobe
