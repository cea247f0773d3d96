// SPDX-License-Identifier: Apache-2.0
#include "normprobe/verify.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <deque>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include "normprobe/analysis.hpp"
#include "normprobe/models.hpp"
#include "normprobe/norm.hpp"
#include "normprobe/ops.hpp"
#include "normprobe/rng.hpp"
#include "normprobe/training.hpp"

namespace normprobe {

double gradient_tolerance(bool f64) { return f64 ? 1e-3 : 2e-2; }

template <typename T>
GradCheck check_gradients(const LossBuilder<T>& build, const std::vector<Tensor3<T>*>& params,
                          double step) {
  for (auto* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
  }
  double f0 = 0.0;
  {
    Tape<T> tape;
    const Var loss = build(tape);
    f0 = tape.value(loss)[0];
    tape.backward(loss);
  }
  std::vector<std::vector<T>> analytic;
  for (auto* p : params) {
    if (p->has_grad()) {
      analytic.emplace_back(p->grad().begin(), p->grad().end());
    } else {
      analytic.emplace_back(p->size(), T(0));
    }
  }
  auto eval = [&]() {
    Tape<T> tape;
    return static_cast<double>(tape.value(build(tape))[0]);
  };
  // Coordinates sitting on a kink are skipped.
  const double kink = step < 1e-4 ? 1e-2 : 0.25;

  GradCheck out;
  std::vector<double> worst(params.size(), 0.0), scale(params.size(), 0.0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor3<T>& p = *params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T saved = p[i];
      p[i] = static_cast<T>(saved + step);
      const double fp = eval();
      p[i] = static_cast<T>(saved - step);
      const double fm = eval();
      p[i] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double right = (fp - f0) / step;
      const double left = (f0 - fm) / step;
      if (std::abs(right - left) > kink * std::max(1.0, std::abs(numeric))) {
        ++out.skipped;
        continue;
      }
      ++out.checked;
      const double a = analytic[pi][i];
      worst[pi] = std::max(worst[pi], std::abs(a - numeric));
      scale[pi] = std::max({scale[pi], std::abs(a), std::abs(numeric)});
    }
  }
  // A tensor whose true gradient vanishes is judged against the overall scale.
  const double global = *std::max_element(scale.begin(), scale.end());
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const double denom = std::max({scale[pi], 1e-3 * global, 1e-12});
    out.max_rel_error = std::max(out.max_rel_error, worst[pi] / denom);
  }
  return out;
}

template GradCheck check_gradients<float>(const LossBuilder<float>&, const std::vector<Tensor3f*>&, double);
template GradCheck check_gradients<double>(const LossBuilder<double>&, const std::vector<Tensor3d*>&, double);

namespace {

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.uniform() * static_cast<double>(hi - lo + 1)) % (hi - lo + 1);
}

std::string shape_text(std::initializer_list<Shape3> shapes) {
  std::string s;
  for (const auto& sh : shapes) s += (s.empty() ? "" : " ") + to_string(sh);
  return s;
}

template <typename T>
Tensor3<T> away_from_zero(Rng& rng, Shape3 shape) {
  Tensor3<T> t(shape);
  for (auto& v : t.storage()) {
    const double g = rng.normal();
    v = static_cast<T>(g < 0 ? g - 0.1 : g + 0.1);
  }
  return t;
}

const char* const kGradKinds[] = {"conv1d_same", "conv1d_valid", "relu",      "batch_norm",
                                  "layer_norm",  "instance_norm", "group_norm", "packnorm",
                                  "mse",         "probe_mlp",     "linear",     "conv_norm_stack"};
constexpr std::size_t kGradKindCount = std::size(kGradKinds);

template <typename T>
CheckResult gradient_case(std::size_t index, std::uint64_t seed, double step, double tol) {
  Rng rng = Rng(seed).fork(index);
  const std::size_t kind = index % kGradKindCount;
  std::deque<Tensor3<T>> owned;
  std::vector<Tensor3<T>*> params;
  auto add = [&](Tensor3<T> t) {
    owned.push_back(std::move(t));
    params.push_back(&owned.back());
    return &owned.back();
  };
  LossBuilder<T> build;
  std::string shapes;
  std::optional<NormSpec<T>> spec;

  auto probe_weights = [&](Shape3 shape) { return gaussian<T>(rng, shape); };

  switch (kind) {
    case 0:
    case 1: {
      const std::size_t n = pick(rng, 1, 3), cin = pick(rng, 1, 4), cout = pick(rng, 1, 4);
      const std::size_t k = 2 * pick(rng, 0, 2) + 1;
      const std::size_t s = pick(rng, k, 12);
      const std::size_t pad = kind == 0 ? k / 2 : 0;
      auto* x = add(gaussian<T>(rng, Shape3{n, cin, s}));
      auto* w = add(gaussian<T>(rng, Shape3{cout, cin, k}));
      auto* b = add(gaussian<T>(rng, Shape3{cout, 1, 1}));
      auto r = std::make_shared<Tensor3<T>>(gaussian<T>(rng, Shape3{n, cout, s + 2 * pad - k + 1}));
      build = [=](Tape<T>& tape) {
        const Var y = conv1d(tape, tape.leaf(*x), tape.leaf(*w), tape.leaf(*b), pad);
        return dot(tape, y, tape.constant(*r));
      };
      shapes = shape_text({x->shape(), w->shape()}) + " pad " + std::to_string(pad);
      break;
    }
    case 2: {
      const Shape3 sh{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 2, 10)};
      auto* x = add(away_from_zero<T>(rng, sh));
      auto r = std::make_shared<Tensor3<T>>(gaussian<T>(rng, sh));
      build = [=](Tape<T>& tape) { return dot(tape, relu(tape, tape.leaf(*x)), tape.constant(*r)); };
      shapes = to_string(sh);
      break;
    }
    case 3:
    case 4:
    case 5:
    case 6: {
      const NormVariant variant = kind == 3   ? NormVariant::Batch
                                  : kind == 4 ? NormVariant::Layer
                                  : kind == 5 ? NormVariant::Instance
                                              : NormVariant::Group;
      const std::size_t groups = kind == 6 ? pick(rng, 2, 3) : 1;
      const std::size_t c = kind == 6 ? groups * pick(rng, 1, 2) : pick(rng, 1, 4);
      const Shape3 sh{pick(rng, 2, 3), c, pick(rng, 3, 8)};
      spec = NormSpec<T>::make(variant, c, groups);
      spec->gamma = uniform<T>(rng, Shape3{c, 1, 1}, 0.5, 1.5);
      spec->beta = gaussian<T>(rng, Shape3{c, 1, 1});
      auto* z = add(gaussian<T>(rng, sh));
      params.push_back(&spec->gamma);
      params.push_back(&spec->beta);
      auto r = std::make_shared<Tensor3<T>>(gaussian<T>(rng, sh));
      NormSpec<T>* sp = &*spec;
      build = [=](Tape<T>& tape) {
        return dot(tape, norm_forward(tape, tape.leaf(*z), *sp, /*training=*/true), tape.constant(*r));
      };
      shapes = to_string(sh) + (kind == 6 ? " G " + std::to_string(groups) : "");
      break;
    }
    case 7: {
      const Shape3 sh{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 2, 6)};
      spec = NormSpec<T>::make(NormVariant::Instance, sh.c);
      spec->gamma = uniform<T>(rng, Shape3{sh.c, 1, 1}, 0.5, 1.5);
      spec->beta = gaussian<T>(rng, Shape3{sh.c, 1, 1});
      auto* u = add(gaussian<T>(rng, sh));
      auto* ut = add(gaussian<T>(rng, sh));
      params.push_back(&spec->gamma);
      params.push_back(&spec->beta);
      auto r = std::make_shared<Tensor3<T>>(gaussian<T>(rng, Shape3{2 * sh.n, sh.c, sh.s}));
      NormSpec<T>* sp = &*spec;
      build = [=](Tape<T>& tape) {
        auto [a, b] = packnorm_forward(tape, tape.leaf(*u), tape.leaf(*ut), *sp);
        return dot(tape, concat_batch(tape, a, b), tape.constant(*r));
      };
      shapes = to_string(sh);
      break;
    }
    case 8: {
      const Shape3 sh{pick(rng, 1, 4), pick(rng, 1, 3), pick(rng, 1, 8)};
      auto* p = add(gaussian<T>(rng, sh));
      auto* t = add(gaussian<T>(rng, sh));
      build = [=](Tape<T>& tape) { return mse(tape, tape.leaf(*p), tape.leaf(*t)); };
      shapes = to_string(sh);
      break;
    }
    case 9: {
      const std::size_t rows = pick(rng, 2, 6), h = pick(rng, 2, 5), width = pick(rng, 3, 8);
      auto* x = add(gaussian<T>(rng, Shape3{rows, h, 1}));
      auto* w1 = add(probe_weights(Shape3{width, h, 1}));
      auto* b1 = add(gaussian<T>(rng, Shape3{width, 1, 1}));
      auto* w2 = add(probe_weights(Shape3{width, width, 1}));
      auto* b2 = add(gaussian<T>(rng, Shape3{width, 1, 1}));
      auto* w3 = add(probe_weights(Shape3{1, width, 1}));
      auto* b3 = add(gaussian<T>(rng, Shape3{1, 1, 1}));
      auto r = std::make_shared<Tensor3<T>>(gaussian<T>(rng, Shape3{rows, 1, 1}));
      build = [=](Tape<T>& tape) {
        Var a = relu(tape, linear(tape, tape.leaf(*x), tape.leaf(*w1), tape.leaf(*b1)));
        a = relu(tape, linear(tape, a, tape.leaf(*w2), tape.leaf(*b2)));
        a = linear(tape, a, tape.leaf(*w3), tape.leaf(*b3));
        return dot(tape, a, tape.constant(*r));
      };
      shapes = "rows " + std::to_string(rows) + " h " + std::to_string(h) + " width " + std::to_string(width);
      break;
    }
    case 10: {
      const std::size_t rows = pick(rng, 1, 6), in = pick(rng, 1, 5), out = pick(rng, 1, 5);
      auto* x = add(gaussian<T>(rng, Shape3{rows, in, 1}));
      auto* w = add(gaussian<T>(rng, Shape3{out, in, 1}));
      auto* b = add(gaussian<T>(rng, Shape3{out, 1, 1}));
      auto r = std::make_shared<Tensor3<T>>(gaussian<T>(rng, Shape3{rows, out, 1}));
      build = [=](Tape<T>& tape) {
        return dot(tape, linear(tape, tape.leaf(*x), tape.leaf(*w), tape.leaf(*b)), tape.constant(*r));
      };
      shapes = shape_text({x->shape(), w->shape()});
      break;
    }
    default: {
      const std::size_t n = pick(rng, 1, 2), h = pick(rng, 2, 3), s = pick(rng, 4, 8);
      auto* x = add(gaussian<T>(rng, Shape3{n, 1, s}));
      auto* w1 = add(gaussian<T>(rng, Shape3{h, 1, 3}));
      auto* b1 = add(gaussian<T>(rng, Shape3{h, 1, 1}));
      auto* w2 = add(gaussian<T>(rng, Shape3{1, h, 3}));
      auto* b2 = add(gaussian<T>(rng, Shape3{1, 1, 1}));
      spec = NormSpec<T>::make(NormVariant::Instance, h);
      NormSpec<T>* sp = &*spec;
      auto target = std::make_shared<Tensor3<T>>(gaussian<T>(rng, Shape3{n, 1, s}));
      build = [=](Tape<T>& tape) {
        Var a = conv1d(tape, tape.leaf(*x), tape.leaf(*w1), tape.leaf(*b1), 1);
        a = relu(tape, norm_forward(tape, a, *sp, true));
        a = conv1d(tape, a, tape.leaf(*w2), tape.leaf(*b2), 1);
        return mse(tape, a, tape.constant(*target));
      };
      shapes = "n " + std::to_string(n) + " h " + std::to_string(h) + " s " + std::to_string(s);
      break;
    }
  }

  const GradCheck gc = check_gradients<T>(build, params, step);
  CheckResult r;
  r.suite = "gradients";
  r.name = std::string(kGradKinds[kind]) + "#" + std::to_string(index);
  r.value = gc.max_rel_error;
  r.tolerance = tol;
  // A check that skipped most coordinates proved nothing.
  r.passed = gc.max_rel_error < tol && gc.checked > 0 && gc.skipped * 10 <= gc.checked + gc.skipped;
  std::ostringstream d;
  d << shapes << "; checked " << gc.checked << " skipped " << gc.skipped;
  r.detail = d.str();
  return r;
}

CheckResult make(const std::string& suite, const std::string& name, bool passed, double value,
                 double tolerance, std::string detail = {}) {
  return {suite, name, passed, value, tolerance, std::move(detail)};
}

template <typename T>
double max_abs_diff(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - b[i]);
    if (!(d <= m)) m = std::isnan(d) ? INFINITY : d;
  }
  return m;
}

Tensor3f run_norm(const Tensor3f& z, NormSpec<float>& spec, bool training) {
  Tape<float> tape;
  return tape.value(norm_forward(tape, tape.constant(z), spec, training)).detached();
}

// Jacobian d out / d z of a norm layer over every (output, input) pair.
std::vector<std::vector<double>> norm_jacobian(const Tensor3d& z, NormSpec<double>& spec, bool training) {
  Tensor3d input = z.detached();
  input.set_requires_grad(true);
  std::vector<std::vector<double>> jac;
  for (std::size_t j = 0; j < z.size(); ++j) {
    input.zero_grad();
    Tape<double> tape;
    Tensor3d onehot(z.shape());
    onehot[j] = 1.0;
    const Var out = norm_forward(tape, tape.leaf(input), spec, training);
    tape.backward(dot(tape, out, tape.constant(std::move(onehot))));
    jac.emplace_back(input.grad().begin(), input.grad().end());
  }
  return jac;
}

// Runs one block of checks; an exception becomes a failed check named `name`.
template <typename F>
void guarded(std::vector<CheckResult>& out, const std::string& suite, const std::string& name, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    out.push_back(make(suite, name, false, NAN, 0.0, std::string("threw: ") + e.what()));
  }
}

}  // namespace

std::vector<CheckResult> verify_gradients(const VerifyOptions& opts) {
  std::vector<CheckResult> out;
  const double tol = gradient_tolerance(opts.f64);
  for (std::size_t i = 0; i < opts.gradient_cases; ++i) {
    out.push_back(opts.f64 ? gradient_case<double>(i, opts.seed, 1e-5, tol)
                           : gradient_case<float>(i, opts.seed, 1e-2, tol));
  }
  return out;
}

std::vector<CheckResult> verify_normalization(const VerifyOptions& opts) {
  const std::string suite = "normalization";
  std::vector<CheckResult> out;
  Rng rng = Rng(opts.seed).fork(101);
  const double eps = opts.norm_epsilon;

  guarded(out, suite, "group_equivalences", [&] {
    double g1 = 0.0, gc = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const Shape3 sh{pick(rng, 1, 4), pick(rng, 1, 6), pick(rng, 2, 20)};
      const Tensor3f z = gaussian<float>(rng, sh);
      auto layer = NormSpec<float>::make(NormVariant::Layer, sh.c, 1, eps);
      auto inst = NormSpec<float>::make(NormVariant::Instance, sh.c, 1, eps);
      auto grp1 = NormSpec<float>::make(NormVariant::Group, sh.c, 1, eps);
      auto grpc = NormSpec<float>::make(NormVariant::Group, sh.c, sh.c, eps);
      const Tensor3f gamma = uniform<float>(rng, Shape3{sh.c, 1, 1}, 0.5, 1.5);
      const Tensor3f beta = gaussian<float>(rng, Shape3{sh.c, 1, 1});
      for (auto* s : {&layer, &inst, &grp1, &grpc}) {
        s->gamma = gamma.detached();
        s->beta = beta.detached();
      }
      g1 = std::max(g1, max_abs_diff<float>(run_norm(z, grp1, true).data(), run_norm(z, layer, true).data()));
      gc = std::max(gc, max_abs_diff<float>(run_norm(z, grpc, true).data(), run_norm(z, inst, true).data()));
    }
    out.push_back(make(suite, "group_g1_equals_layer", g1 <= 1e-6, g1, 1e-6));
    out.push_back(make(suite, "group_gc_equals_instance", gc <= 1e-6, gc, 1e-6));
  });

  guarded(out, suite, "pre_affine_moments", [&] {
    double worst_mean = 0.0, worst_var = 0.0;
    for (NormVariant v : {NormVariant::Batch, NormVariant::Layer, NormVariant::Instance, NormVariant::Group}) {
      const std::size_t groups = v == NormVariant::Group ? 2 : 1;
      const Shape3 sh{3, 4, 9};
      Tensor3f z = gaussian<float>(rng, sh);
      for (auto& x : z.storage()) x = 2.0f * x + 0.5f;
      auto spec = NormSpec<float>::make(v, sh.c, groups, eps);
      spec.gamma = uniform<float>(rng, Shape3{sh.c, 1, 1}, 0.5, 1.5);
      spec.beta = gaussian<float>(rng, Shape3{sh.c, 1, 1});
      const Tensor3f y = run_norm(z, spec, true);
      // Enumerate sets as lists of flat indices.
      std::vector<std::vector<std::size_t>> sets;
      auto idx = [&](std::size_t n, std::size_t c, std::size_t s) { return (n * sh.c + c) * sh.s + s; };
      if (v == NormVariant::Batch) {
        for (std::size_t c = 0; c < sh.c; ++c) {
          sets.emplace_back();
          for (std::size_t n = 0; n < sh.n; ++n)
            for (std::size_t s = 0; s < sh.s; ++s) sets.back().push_back(idx(n, c, s));
        }
      } else {
        const std::size_t g = v == NormVariant::Layer ? 1 : v == NormVariant::Instance ? sh.c : groups;
        const std::size_t k = sh.c / g;
        for (std::size_t n = 0; n < sh.n; ++n) {
          for (std::size_t gi = 0; gi < g; ++gi) {
            sets.emplace_back();
            for (std::size_t c = gi * k; c < (gi + 1) * k; ++c)
              for (std::size_t s = 0; s < sh.s; ++s) sets.back().push_back(idx(n, c, s));
          }
        }
      }
      for (const auto& set : sets) {
        double zm = 0.0, pm = 0.0;
        for (auto i : set) {
          const std::size_t c = (i / sh.s) % sh.c;
          zm += z[i];
          pm += (static_cast<double>(y[i]) - spec.beta[c]) / spec.gamma[c];
        }
        zm /= static_cast<double>(set.size());
        pm /= static_cast<double>(set.size());
        double zv = 0.0, pv = 0.0;
        for (auto i : set) {
          const std::size_t c = (i / sh.s) % sh.c;
          const double p = (static_cast<double>(y[i]) - spec.beta[c]) / spec.gamma[c];
          zv += (z[i] - zm) * (z[i] - zm);
          pv += (p - pm) * (p - pm);
        }
        zv /= static_cast<double>(set.size());
        pv /= static_cast<double>(set.size());
        worst_mean = std::max(worst_mean, std::abs(pm));
        worst_var = std::max(worst_var, std::abs(pv - zv / (zv + eps)));
        if (std::isnan(pm) || std::isnan(pv)) worst_mean = worst_var = INFINITY;
      }
    }
    out.push_back(make(suite, "pre_affine_mean", worst_mean < 1e-5, worst_mean, 1e-5));
    out.push_back(make(suite, "pre_affine_variance", worst_var < 1e-5, worst_var, 1e-5));
  });

  guarded(out, suite, "instance_hand_example", [&] {
    auto spec = NormSpec<float>::make(NormVariant::Instance, 1, 1, 1e-12);
    const Tensor3f y = run_norm(Tensor3f(Shape3{1, 1, 3}, {1, 2, 3}), spec, true);
    const float expect[] = {-1.22474487f, 0.0f, 1.22474487f};
    const double d = max_abs_diff<float>(y.data(), expect);
    out.push_back(make(suite, "instance_hand_example", d < 1e-5, d, 1e-5));
  });

  guarded(out, suite, "constant_input_gives_beta", [&] {
    double worst = 0.0;
    for (NormVariant v : {NormVariant::Batch, NormVariant::Layer, NormVariant::Instance, NormVariant::Group}) {
      auto spec = NormSpec<float>::make(v, 1, 1, eps);
      spec.beta[0] = 0.25f;
      const Tensor3f y = run_norm(Tensor3f(Shape3{1, 1, 3}, 5.0f), spec, true);
      worst = std::max(worst, max_abs_diff<float>(y.data(), std::vector<float>(3, 0.25f)));
    }
    out.push_back(make(suite, "constant_input_gives_beta", worst == 0.0, worst, 0.0,
                       "epsilon " + std::to_string(eps)));
  });

  guarded(out, suite, "batch_ema_exact", [&] {
    // The EMA must equal the closed-form update bit for bit.
    const Shape3 sh{4, 3, 7};
    auto spec = NormSpec<float>::make(NormVariant::Batch, sh.c, 1, eps);
    spec.running_mean = gaussian<float>(rng, Shape3{sh.c, 1, 1});
    spec.running_var = uniform<float>(rng, Shape3{sh.c, 1, 1}, 0.5, 2.0);
    const Tensor3f old_mean = spec.running_mean.detached();
    const Tensor3f old_var = spec.running_var.detached();
    const Tensor3f z = gaussian<float>(rng, sh);
    run_norm(z, spec, true);
    const double m = spec.ema_momentum;
    bool exact = spec.ema_updates == 1;
    double worst = 0.0;
    for (std::size_t c = 0; c < sh.c; ++c) {
      const double count = static_cast<double>(sh.n * sh.s);
      double mu = 0.0;
      for (std::size_t n = 0; n < sh.n; ++n)
        for (std::size_t s = 0; s < sh.s; ++s) mu += z(n, c, s);
      mu /= count;
      double sq = 0.0;
      for (std::size_t n = 0; n < sh.n; ++n)
        for (std::size_t s = 0; s < sh.s; ++s) sq += (z(n, c, s) - mu) * (z(n, c, s) - mu);
      const double unbiased = sq / count * count / (count - 1.0);
      const float em = static_cast<float>((1.0 - m) * old_mean[c] + m * mu);
      const float ev = static_cast<float>((1.0 - m) * old_var[c] + m * unbiased);
      exact = exact && em == spec.running_mean[c] && ev == spec.running_var[c];
      worst = std::max({worst, std::abs(static_cast<double>(em) - spec.running_mean[c]),
                        std::abs(static_cast<double>(ev) - spec.running_var[c])});
    }
    out.push_back(make(suite, "batch_ema_exact", exact, worst, 0.0));
  });

  guarded(out, suite, "batch_cross_gradient", [&] {
    const Shape3 sh{3, 2, 4};
    const Tensor3d z = gaussian<double>(rng, sh);
    auto spec = NormSpec<double>::make(NormVariant::Batch, sh.c, 1, eps);
    {
      Tape<double> tape;
      norm_forward(tape, tape.constant(gaussian<double>(rng, sh)), spec, true);
    }
    spec.stats_mode = StatsMode::Population;
    const auto jp = norm_jacobian(z, spec, false);
    double off = 0.0;
    for (std::size_t j = 0; j < jp.size(); ++j)
      for (std::size_t i = 0; i < jp[j].size(); ++i)
        if (i != j) off = std::max(off, std::abs(jp[j][i]));
    out.push_back(make(suite, "population_no_cross_gradient", off == 0.0, off, 0.0));

    spec.stats_mode = StatsMode::Minibatch;
    const auto jm = norm_jacobian(z, spec, false);
    double cross = 0.0;
    for (std::size_t j = 0; j < jm.size(); ++j)
      for (std::size_t i = 0; i < jm[j].size(); ++i)
        if (i != j && (i / sh.s) % sh.c == (j / sh.s) % sh.c) cross = std::max(cross, std::abs(jm[j][i]));
    out.push_back(make(suite, "minibatch_cross_gradient", cross > 1e-6, cross, 1e-6));
  });

  guarded(out, suite, "packnorm", [&] {
    const Shape3 sh{2, 3, 6};
    auto spec = NormSpec<float>::make(NormVariant::Instance, sh.c, 1, eps);
    spec.gamma = uniform<float>(rng, Shape3{sh.c, 1, 1}, 0.5, 1.5);
    spec.beta = gaussian<float>(rng, Shape3{sh.c, 1, 1});
    const Tensor3f a = gaussian<float>(rng, sh);
    const Tensor3f b = gaussian<float>(rng, sh);
    Tape<float> tape;
    auto [uu, vv] = packnorm_forward(tape, tape.constant(a), tape.constant(a), spec);
    const Tensor3f plain = run_norm(a, spec, true);
    const double dup = std::max(max_abs_diff<float>(tape.value(uu).data(), plain.data()),
                                max_abs_diff<float>(tape.value(vv).data(), plain.data()));
    out.push_back(make(suite, "packnorm_duplicate_is_instance", dup < 1e-6, dup, 1e-6));

    auto [p, q] = packnorm_forward(tape, tape.constant(a), tape.constant(b), spec);
    auto [q2, p2] = packnorm_forward(tape, tape.constant(b), tape.constant(a), spec);
    const double swap = std::max(max_abs_diff<float>(tape.value(p).data(), tape.value(p2).data()),
                                 max_abs_diff<float>(tape.value(q).data(), tape.value(q2).data()));
    out.push_back(make(suite, "packnorm_swap_exact", swap == 0.0, swap, 0.0));
  });
  return out;
}

double student_t_p_quadrature(double t, double dof) {
  const double at = std::abs(t);
  if (at == 0.0) return 1.0;
  const double logc = std::lgamma((dof + 1.0) / 2.0) - std::lgamma(dof / 2.0) -
                      0.5 * std::log(dof * std::numbers::pi);
  auto density = [&](double x) { return std::exp(logc - (dof + 1.0) / 2.0 * std::log1p(x * x / dof)); };
  using boost::math::quadrature::gauss_kronrod;
  const double half = gauss_kronrod<double, 61>::integrate(density, 0.0, at, 15, 1e-14);
  return std::clamp(1.0 - 2.0 * half, 0.0, 1.0);
}

std::vector<CheckResult> verify_welch(const VerifyOptions&) {
  const std::string suite = "welch";
  std::vector<CheckResult> out;
  {
    const float a[] = {1, 2, 3, 4, 5};
    const float b[] = {2, 3, 4, 5, 6};
    const TTestResult r = welch_t(a, b);
    const double oracle = student_t_p_quadrature(-1.0, 8.0);
    out.push_back(make(suite, "hand_case_t", r.t == -1.0, r.t, -1.0));
    out.push_back(make(suite, "hand_case_dof", r.dof == 8.0, r.dof, 8.0));
    const double d = std::abs(r.p - oracle);
    out.push_back(make(suite, "hand_case_p", d < 1e-4, d, 1e-4,
                       "p " + std::to_string(r.p) + " oracle " + std::to_string(oracle)));
  }
  {
    double worst = 0.0;
    std::string where;
    for (int ti = 1; ti <= 50; ++ti) {
      const double t = 0.1 * ti;
      for (int nu = 1; nu <= 100; ++nu) {
        const double d = std::abs(student_t_two_sided_p(t, nu) - student_t_p_quadrature(t, nu));
        if (!(d <= worst)) {
          worst = std::isnan(d) ? INFINITY : d;
          where = "t " + std::to_string(t) + " dof " + std::to_string(nu);
        }
      }
    }
    out.push_back(make(suite, "p_value_grid", worst < 1e-6, worst, 1e-6, "worst at " + where));
  }
  {
    const float a[] = {0.3f, 1.2f, -0.4f, 2.2f, 0.9f, 1.1f};
    const float b[] = {1.5f, 0.2f, 2.9f, 1.7f};
    const TTestResult ab = welch_t(a, b);
    const TTestResult ba = welch_t(b, a);
    const bool ok = ab.t == -ba.t && ab.p == ba.p && ab.dof == ba.dof;
    out.push_back(make(suite, "symmetry", ok, std::abs(ab.t + ba.t), 0.0));
    const TTestResult same = welch_t(a, a);
    out.push_back(make(suite, "identical_samples", same.t == 0.0 && same.p == 1.0, same.p, 1.0));
  }
  return out;
}

std::vector<CheckResult> verify_locality(const VerifyOptions& opts) {
  const std::string suite = "locality";
  std::vector<CheckResult> out;
  ModelConfig mc;
  mc.length = 64;
  mc.depth = 5;
  mc.kernel = 5;
  mc.hidden = 6;
  const std::size_t r = receptive_field(mc.depth, mc.kernel);
  const std::size_t shift = 5;

  double worst_equiv = 0.0, worst_leak = 0.0;
  std::size_t reached = 0, probed = 0;
  for (std::size_t seed = 0; seed < opts.locality_seeds; ++seed) {
    Rng rng = Rng(opts.seed).fork(1000 + seed);
    LocCnn model(mc, rng);
    for (auto& c : model.convs()) {
      c.bias = gaussian<float>(rng, c.bias.shape());
      for (auto& v : c.bias.storage()) v *= 0.1f;
    }

    const Tensor3f x = gaussian<float>(rng, Shape3{1, 1, mc.length});
    Tensor3f xs = gaussian<float>(rng, Shape3{1, 1, mc.length});
    for (std::size_t j = 0; j + shift < mc.length; ++j) xs[j + shift] = x[j];
    const Tensor3f f = infer(model, x, false).first;
    const Tensor3f fs = infer(model, xs, false).first;
    for (std::size_t i = r; i + shift + r < mc.length; ++i) {
      worst_equiv = std::max(worst_equiv, std::abs(static_cast<double>(fs[i + shift]) - f[i]));
    }

    Tensor3f input = x.detached();
    input.set_requires_grad(true);
    for (std::size_t i : {std::size_t{0}, std::size_t{7}, mc.length / 2, mc.length - 1}) {
      input.zero_grad();
      Tape<float> tape;
      const Var pred = model.forward(tape, tape.leaf(input), false).prediction;
      Tensor3f onehot(Shape3{1, 1, mc.length});
      onehot[i] = 1.0f;
      tape.backward(dot(tape, pred, tape.constant(std::move(onehot))));
      const auto g = input.grad();
      bool reach = false;
      for (std::size_t j = 0; j < mc.length; ++j) {
        const std::size_t dist = i > j ? i - j : j - i;
        if (dist > r) worst_leak = std::max(worst_leak, static_cast<double>(std::abs(g[j])));
        if (dist <= r && g[j] != 0.0f) reach = true;
      }
      reached += reach ? 1 : 0;
        ++probed;
    }
  }
  const std::string seeds = std::to_string(opts.locality_seeds) + " seeds";
  out.push_back(make(suite, "translation_equivariance", worst_equiv <= 1e-4, worst_equiv, 1e-4, seeds));
  out.push_back(make(suite, "jacobian_zero_beyond_receptive_field", worst_leak == 0.0 && reached > 0,
                     worst_leak, 0.0,
                       seeds + ", " + std::to_string(reached) + "/" + std::to_string(probed) + " outputs live"));

  {
    ModelConfig nc = mc;
    nc.norm = NormVariant::Instance;
    Rng rng = Rng(opts.seed).fork(999);
    LocCnn model(nc, rng);
    Tensor3f input = gaussian<float>(rng, Shape3{1, 1, nc.length});
    input.set_requires_grad(true);
    const std::size_t i = 0;
    Tape<float> tape;
    const Var pred = model.forward(tape, tape.leaf(input), false).prediction;
    Tensor3f onehot(Shape3{1, 1, nc.length});
    onehot[i] = 1.0f;
    tape.backward(dot(tape, pred, tape.constant(std::move(onehot))));
    double far = 0.0;
    for (std::size_t j = r + 1; j < nc.length; ++j) far = std::max(far, static_cast<double>(std::abs(input.grad()[j])));
    out.push_back(make(suite, "instance_norm_side_channel", far > 0.0, far, 0.0));
  }
  return out;
}

std::vector<CheckResult> verify_all(const VerifyOptions& opts) {
  std::vector<CheckResult> all;
  for (auto* suite : {&verify_gradients, &verify_normalization, &verify_welch, &verify_locality}) {
    auto part = suite(opts);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

}  // namespace normprobe
