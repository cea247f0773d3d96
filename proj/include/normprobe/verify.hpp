// SPDX-License-Identifier: Apache-2.0
//
// Property suites shared by `normprobe verify` and the acceptance binary.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "normprobe/tape.hpp"

namespace normprobe {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double value = 0.0;      // the measured quantity
  double tolerance = 0.0;  // what it was compared against
  std::string detail;
};

struct VerifyOptions {
  bool f64 = true;  // finite differences in double; float mode uses a looser tolerance
  double norm_epsilon = 1e-5;
  std::uint64_t seed = 0;
  std::size_t gradient_cases = 24;
  std::size_t locality_seeds = 10;
};

/// Tolerance on the gradient check's max relative error for the chosen precision.
double gradient_tolerance(bool f64);

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose one-sided slopes disagree (a ReLU kink)
};

/// Records a scalar loss on the tape, reading the checked tensors through tape.leaf().
template <typename T>
using LossBuilder = std::function<Var(Tape<T>&)>;

/// Central finite differences against tape gradients for every entry of
/// every tensor in `params`. The error of one tensor is max |analytic -
/// numeric| over its entries divided by its largest gradient magnitude,
/// floored at 1e-3 of the largest over all tensors; the result is the max
/// over tensors.
template <typename T>
GradCheck check_gradients(const LossBuilder<T>& build, const std::vector<Tensor3<T>*>& params,
                          double step);

std::vector<CheckResult> verify_gradients(const VerifyOptions& opts);
std::vector<CheckResult> verify_normalization(const VerifyOptions& opts);
std::vector<CheckResult> verify_welch(const VerifyOptions& opts);
std::vector<CheckResult> verify_locality(const VerifyOptions& opts);
std::vector<CheckResult> verify_all(const VerifyOptions& opts);

/// Two-sided Student-t p-value by Gauss-Kronrod quadrature of the density,
/// independent of the incomplete-beta path.
double student_t_p_quadrature(double t, double dof);

}  // namespace normprobe
