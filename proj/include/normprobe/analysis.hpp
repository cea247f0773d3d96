// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "normprobe/models.hpp"
#include "normprobe/rng.hpp"

namespace normprobe {

/// Per-index prediction samples: sample(j, r) is the r-th prediction at index j.
class EmpiricalMarginals {
 public:
  EmpiricalMarginals() = default;
  EmpiricalMarginals(std::size_t length, std::size_t samples, std::string source);

  std::size_t length() const { return length_; }
  std::size_t samples() const { return samples_; }
  const std::string& source() const { return source_; }

  std::span<const float> at(std::size_t index) const {
    return {data_.data() + index * samples_, samples_};
  }
  std::span<float> at(std::size_t index) { return {data_.data() + index * samples_, samples_}; }

  struct Moments {
    double mean;
    double var;  // sample variance, divisor n - 1
  };
  /// Mean and sample variance per index.
  std::vector<Moments> moments() const;

 private:
  std::size_t length_ = 0;
  std::size_t samples_ = 0;
  std::string source_;
  std::vector<float> data_;
};

struct TTestResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
};

/// Regularized incomplete beta I_x(a, b) by Lentz continued fractions.
double incomplete_beta(double a, double b, double x);
/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

/// Welch's unequal-variance t-test, two-sided. Degenerate inputs (both
/// variances zero) give p = 1 for equal means and p = 0 otherwise.
TTestResult welch_t(std::span<const float> a, std::span<const float> b);
TTestResult welch_t(double mean_a, double var_a, double n_a, double mean_b, double var_b, double n_b);

struct LocalizeOptions {
  double alpha = 0.1;
  bool bonferroni = false;  // alpha / (length - 1) per comparison
};

/// True iff index's mean differs from every other index's mean at level alpha.
bool localizes(std::size_t index, const EmpiricalMarginals& m, const LocalizeOptions& opts = {});
/// localizes() for every index, reusing one moment pass.
std::vector<bool> localized_indices(const EmpiricalMarginals& m, const LocalizeOptions& opts = {});

/// max over localized 1-based j of min(j, length + 1 - j); 0 when none.
std::size_t localization_distance(const std::vector<bool>& row);

struct LocalizationMap {
  std::size_t length = 0;
  std::size_t depth = 0;  // network depth d; the grid has d - 1 rows
  std::size_t samples = 0;
  double alpha = 0.1;
  bool bonferroni = false;
  std::vector<std::vector<bool>> rows;  // rows[i - 1][j - 1] for depth i, index j

  std::size_t final_distance() const { return localization_distance(rows.back()); }
};

/// Maps a batch of inputs (B, 1, length) to per-index predictions (B, 1, length).
using Predictor = std::function<Tensor3f(const Tensor3f&)>;

/// Pushes n fresh standard-normal inputs through `predictor` in batches of
/// `batch` (the final batch is still full-size; surplus rows are dropped).
EmpiricalMarginals sample_marginals(const Predictor& predictor, std::size_t length, std::size_t n,
                                    std::size_t batch, Rng& rng, std::string source);

struct ModelMarginals {
  EmpiricalMarginals output;                // network output f
  std::vector<EmpiricalMarginals> probes;   // probe at depth i, i = 1 .. d - 1
};

/// One sampling pass feeding the network output and every probe.
ModelMarginals sample_model_marginals(LocCnn& model, std::vector<Probe>& probes, std::size_t n,
                                      std::size_t batch, Rng& rng);

LocalizationMap localization_map(const std::vector<EmpiricalMarginals>& probe_marginals,
                                 std::size_t depth, const LocalizeOptions& opts);

/// Samples every probe n times and tests each index at each depth.
LocalizationMap localization_map(LocCnn& model, std::vector<Probe>& probes, std::size_t n,
                                 std::size_t batch, const LocalizeOptions& opts, Rng& rng);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace normprobe
