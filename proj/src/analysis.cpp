// SPDX-License-Identifier: Apache-2.0
#include "normprobe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "normprobe/training.hpp"

namespace normprobe {

EmpiricalMarginals::EmpiricalMarginals(std::size_t length, std::size_t samples, std::string source)
    : length_(length), samples_(samples), source_(std::move(source)), data_(length * samples) {}

std::vector<EmpiricalMarginals::Moments> EmpiricalMarginals::moments() const {
  std::vector<Moments> out(length_);
  for (std::size_t j = 0; j < length_; ++j) {
    const auto s = at(j);
    double acc = 0.0;
    for (float v : s) acc += v;
    const double mean = acc / static_cast<double>(s.size());
    double sq = 0.0;
    for (float v : s) sq += (v - mean) * (v - mean);
    out[j] = {mean, s.size() > 1 ? sq / static_cast<double>(s.size() - 1) : 0.0};
  }
  return out;
}

namespace {

constexpr double kBetaTolerance = 1e-10;
constexpr int kBetaMaxIterations = 100000;

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kBetaMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kBetaTolerance) return h;
  }
  throw std::runtime_error("incomplete_beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("incomplete_beta: a and b must be positive");
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete_beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw std::invalid_argument("student_t: degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  const double x = dof / (dof + t * t);
  return std::clamp(incomplete_beta(0.5 * dof, 0.5, x), 0.0, 1.0);
}

TTestResult welch_t(double mean_a, double var_a, double n_a, double mean_b, double var_b, double n_b) {
  if (n_a < 2 || n_b < 2) throw std::invalid_argument("welch_t: each sample needs at least 2 values");
  const double sa = var_a / n_a;
  const double sb = var_b / n_b;
  const double se2 = sa + sb;
  TTestResult r;
  if (se2 == 0.0) {
    r.dof = n_a + n_b - 2.0;
    if (mean_a == mean_b) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = mean_a > mean_b ? std::numeric_limits<double>::infinity()
                            : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = (mean_a - mean_b) / std::sqrt(se2);
  r.dof = se2 * se2 / (sa * sa / (n_a - 1.0) + sb * sb / (n_b - 1.0));
  r.p = student_t_two_sided_p(r.t, r.dof);
  return r;
}

TTestResult welch_t(std::span<const float> a, std::span<const float> b) {
  auto moments = [](std::span<const float> s) {
    double acc = 0.0;
    for (float v : s) acc += v;
    const double mean = acc / static_cast<double>(s.size());
    double sq = 0.0;
    for (float v : s) sq += (v - mean) * (v - mean);
    return std::pair{mean, s.size() > 1 ? sq / static_cast<double>(s.size() - 1) : 0.0};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  return welch_t(ma, va, static_cast<double>(a.size()), mb, vb, static_cast<double>(b.size()));
}

namespace {

double per_test_alpha(const LocalizeOptions& opts, std::size_t length) {
  return opts.bonferroni && length > 1 ? opts.alpha / static_cast<double>(length - 1) : opts.alpha;
}

// Nearest neighbours first: they are the likeliest to share a mean, so
// non-localized indices bail out early.
bool localizes_with(std::size_t index, const std::vector<EmpiricalMarginals::Moments>& mom,
                    double n, double alpha) {
  const std::size_t length = mom.size();
  for (std::size_t offset = 1; offset < length; ++offset) {
    for (int sign : {-1, 1}) {
      if (sign < 0 && offset > index) continue;
      const std::size_t j = sign < 0 ? index - offset : index + offset;
      if (j >= length) continue;
      const auto r = welch_t(mom[index].mean, mom[index].var, n, mom[j].mean, mom[j].var, n);
      if (!(r.p < alpha)) return false;
    }
  }
  return true;
}

}  // namespace

bool localizes(std::size_t index, const EmpiricalMarginals& m, const LocalizeOptions& opts) {
  if (index >= m.length()) throw std::out_of_range("localizes: index outside the sequence");
  return localizes_with(index, m.moments(), static_cast<double>(m.samples()),
                        per_test_alpha(opts, m.length()));
}

std::vector<bool> localized_indices(const EmpiricalMarginals& m, const LocalizeOptions& opts) {
  const auto mom = m.moments();
  const double alpha = per_test_alpha(opts, m.length());
  std::vector<bool> row(m.length());
  for (std::size_t j = 0; j < m.length(); ++j) {
    row[j] = localizes_with(j, mom, static_cast<double>(m.samples()), alpha);
  }
  return row;
}

std::size_t localization_distance(const std::vector<bool>& row) {
  const std::size_t length = row.size();
  std::size_t best = 0;
  for (std::size_t j = 1; j <= length; ++j) {
    if (row[j - 1]) best = std::max(best, std::min(j, length + 1 - j));
  }
  return best;
}

EmpiricalMarginals sample_marginals(const Predictor& predictor, std::size_t length, std::size_t n,
                                    std::size_t batch, Rng& rng, std::string source) {
  if (n < 2) throw std::invalid_argument("sample_marginals: need at least 2 samples");
  EmpiricalMarginals m(length, n, std::move(source));
  for (std::size_t done = 0; done < n;) {
    const Tensor3f pred = predictor(gaussian<float>(rng, Shape3{batch, 1, length}));
    if (pred.shape() != Shape3{batch, 1, length}) {
      throw ShapeError("sample_marginals: predictor returned " + to_string(pred.shape()));
    }
    const std::size_t take = std::min(batch, n - done);
    for (std::size_t r = 0; r < take; ++r) {
      for (std::size_t j = 0; j < length; ++j) m.at(j)[done + r] = pred(r, 0, j);
    }
    done += take;
  }
  return m;
}

ModelMarginals sample_model_marginals(LocCnn& model, std::vector<Probe>& probes, std::size_t n,
                                      std::size_t batch, Rng& rng) {
  if (n < 2) throw std::invalid_argument("sample_model_marginals: need at least 2 samples");
  const std::size_t length = model.config().length;
  ModelMarginals out{EmpiricalMarginals(length, n, "output"), {}};
  for (const auto& p : probes) {
    out.probes.emplace_back(length, n, "probe@" + std::to_string(p.depth_index()));
  }
  for (std::size_t done = 0; done < n;) {
    const Tensor3f x = gaussian<float>(rng, Shape3{batch, 1, length});
    auto [pred, acts] = infer(model, x, /*capture=*/!probes.empty());
    const std::size_t take = std::min(batch, n - done);
    for (std::size_t r = 0; r < take; ++r) {
      for (std::size_t j = 0; j < length; ++j) out.output.at(j)[done + r] = pred(r, 0, j);
    }
    for (std::size_t i = 0; i < probes.size(); ++i) {
      Tape<float> tape;
      const Var rows = tape.constant(columns_to_rows(acts[probes[i].depth_index() - 1]));
      const auto values = tape.value(probes[i].forward(tape, rows)).data();
      for (std::size_t r = 0; r < take; ++r) {
        for (std::size_t j = 0; j < length; ++j) out.probes[i].at(j)[done + r] = values[r * length + j];
      }
    }
    done += take;
  }
  return out;
}

LocalizationMap localization_map(const std::vector<EmpiricalMarginals>& probe_marginals,
                                 std::size_t depth, const LocalizeOptions& opts) {
  if (probe_marginals.size() + 1 != depth) {
    throw std::invalid_argument("localization_map: expected one marginal set per depth 1 .. d - 1");
  }
  LocalizationMap map;
  map.depth = depth;
  map.length = probe_marginals.front().length();
  map.samples = probe_marginals.front().samples();
  map.alpha = opts.alpha;
  map.bonferroni = opts.bonferroni;
  map.rows.resize(probe_marginals.size());
  const auto count = static_cast<std::ptrdiff_t>(probe_marginals.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) map.rows[i] = localized_indices(probe_marginals[i], opts);
  return map;
}

LocalizationMap localization_map(LocCnn& model, std::vector<Probe>& probes, std::size_t n,
                                 std::size_t batch, const LocalizeOptions& opts, Rng& rng) {
  const auto marginals = sample_model_marginals(model, probes, n, batch, rng);
  return localization_map(marginals.probes, model.config().depth, opts);
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace normprobe
