// SPDX-License-Identifier: Apache-2.0
#include "normprobe/norm.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "normprobe/ops.hpp"

namespace normprobe {

std::string to_string(NormVariant v) {
  switch (v) {
    case NormVariant::Batch: return "batch";
    case NormVariant::Layer: return "layer";
    case NormVariant::Instance: return "instance";
    case NormVariant::Group: return "group";
  }
  return "?";
}

std::optional<NormVariant> parse_norm_variant(const std::string& name) {
  if (name == "batch") return NormVariant::Batch;
  if (name == "layer") return NormVariant::Layer;
  if (name == "instance") return NormVariant::Instance;
  if (name == "group") return NormVariant::Group;
  return std::nullopt;
}

std::string to_string(StatsMode m) {
  return m == StatsMode::Minibatch ? "minibatch" : "population";
}

template <typename T>
NormSpec<T> NormSpec<T>::make(NormVariant variant, std::size_t channels, std::size_t groups,
                              double epsilon) {
  NormSpec spec;
  spec.variant = variant;
  spec.groups = groups;
  spec.epsilon = epsilon;
  spec.gamma = Tensor3<T>(Shape3{channels, 1, 1}, T(1));
  spec.beta = Tensor3<T>(Shape3{channels, 1, 1}, T(0));
  spec.gamma.set_requires_grad(true);
  spec.beta.set_requires_grad(true);
  spec.running_mean = Tensor3<T>(Shape3{channels, 1, 1}, T(0));
  spec.running_var = Tensor3<T>(Shape3{channels, 1, 1}, T(1));
  spec.validate(channels);
  return spec;
}

template <typename T>
void NormSpec<T>::validate(std::size_t c) const {
  if (!(epsilon > 0.0)) throw ShapeError("norm: epsilon must be positive");
  if (gamma.size() != c || beta.size() != c) {
    throw ShapeError("norm: affine parameters sized for " + std::to_string(gamma.size()) +
                     " channels, input has " + std::to_string(c));
  }
  if (variant == NormVariant::Group && (groups == 0 || c % groups != 0)) {
    throw ShapeError("norm: " + std::to_string(c) + " channels are not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (variant == NormVariant::Batch &&
      (running_mean.size() != c || running_var.size() != c || !(ema_momentum > 0.0) ||
       !(ema_momentum < 1.0))) {
    throw ShapeError("norm: batch running statistics malformed");
  }
}

template <typename T>
std::size_t NormSpec<T>::effective_groups() const {
  switch (variant) {
    case NormVariant::Layer: return 1;
    case NormVariant::Instance: return channels();
    case NormVariant::Group: return groups;
    case NormVariant::Batch: return 0;
  }
  return 0;
}

namespace {

// A pooling set: `blocks` runs of `len` contiguous elements, `stride` apart,
// starting at `offset`. Element p of a run belongs to channel
// channel0 + p / spatial.
struct PoolSet {
  std::size_t offset;
  std::size_t len;
  std::size_t blocks;
  std::size_t stride;
  std::size_t channel0;
};

std::vector<PoolSet> group_sets(const Shape3& s, std::size_t groups) {
  const std::size_t k = s.c / groups;
  std::vector<PoolSet> sets;
  sets.reserve(s.n * groups);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      sets.push_back({(n * s.c + g * k) * s.s, k * s.s, 1, 0, g * k});
    }
  }
  return sets;
}

std::vector<PoolSet> batch_sets(const Shape3& s) {
  std::vector<PoolSet> sets;
  sets.reserve(s.c);
  for (std::size_t c = 0; c < s.c; ++c) sets.push_back({c * s.s, s.s, s.n, s.c * s.s, c});
  return sets;
}

// Stacked (2N, C, S): sample n pairs with sample N + n.
std::vector<PoolSet> pack_sets(const Shape3& s) {
  const std::size_t half = s.n / 2;
  std::vector<PoolSet> sets;
  sets.reserve(half * s.c);
  for (std::size_t n = 0; n < half; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      sets.push_back({(n * s.c + c) * s.s, s.s, 2, half * s.c * s.s, c});
    }
  }
  return sets;
}

struct SetStats {
  double mean;
  double var;
  double inv_std;
};

// Calls f(start, channel, q) for each contiguous spatial run of the set,
// q being the run's channel offset within the set.
template <typename F>
void for_each_run(const PoolSet& set, std::size_t spatial, F&& f) {
  const std::size_t runs = set.len / spatial;
  for (std::size_t b = 0; b < set.blocks; ++b) {
    for (std::size_t q = 0; q < runs; ++q) {
      f(set.offset + b * set.stride + q * spatial, set.channel0 + q, q);
    }
  }
}

template <typename T>
Var pooled_norm(Tape<T>& tape, Var z, NormSpec<T>& spec, std::vector<PoolSet> sets,
                bool update_ema) {
  const Tensor3<T>& in = tape.value(z);
  const Shape3 shape = in.shape();
  const std::size_t spatial = shape.s;
  const double eps = spec.epsilon;
  const T* x = in.data().data();
  const auto gamma = spec.gamma.data();
  const auto beta = spec.beta.data();

  Tensor3<T> out(shape);
  T* y = out.data().data();
  std::vector<SetStats> stats(sets.size());
  const auto nsets = static_cast<std::ptrdiff_t>(sets.size());

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < nsets; ++si) {
    const PoolSet& set = sets[si];
    const double count = static_cast<double>(set.len * set.blocks);
    double acc = 0.0;
    for_each_run(set, spatial, [&](std::size_t start, std::size_t, std::size_t) {
      for (std::size_t s = 0; s < spatial; ++s) acc += x[start + s];
    });
    const double mu = acc / count;
    double sq = 0.0;
    for_each_run(set, spatial, [&](std::size_t start, std::size_t, std::size_t) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const double d = x[start + s] - mu;
        sq += d * d;
      }
    });
    const double var = sq / count;
    const double inv = 1.0 / std::sqrt(var + eps);
    stats[si] = {mu, var, inv};
    for_each_run(set, spatial, [&](std::size_t start, std::size_t c, std::size_t) {
      const double g = gamma[c];
      const double b = beta[c];
      for (std::size_t s = 0; s < spatial; ++s) {
        y[start + s] = static_cast<T>(g * ((x[start + s] - mu) * inv) + b);
      }
    });
  }

  if (update_ema) {
    const double m = spec.ema_momentum;
    auto rm = spec.running_mean.data();
    auto rv = spec.running_var.data();
    for (std::size_t si = 0; si < sets.size(); ++si) {
      const double count = static_cast<double>(sets[si].len * sets[si].blocks);
      const double unbiased = count > 1 ? stats[si].var * count / (count - 1.0) : stats[si].var;
      const std::size_t c = sets[si].channel0;
      rm[c] = static_cast<T>((1.0 - m) * rm[c] + m * stats[si].mean);
      rv[c] = static_cast<T>((1.0 - m) * rv[c] + m * unbiased);
    }
    ++spec.ema_updates;
  }

  const Var g = tape.leaf(spec.gamma);
  const Var b = tape.leaf(spec.beta);
  const bool needs = tape.needs_grad(z) || tape.needs_grad(g) || tape.needs_grad(b);
  return tape.record(
      std::move(out), needs,
      [=, sets = std::move(sets), stats = std::move(stats)](Tape<T>& t, std::span<const T> gy) {
        const T* xv = t.value(z).data().data();
        const auto gam = t.value(g).data();
        const std::size_t channels = gam.size();
        const bool want_x = t.needs_grad(z);
        const bool want_affine = t.needs_grad(g) || t.needs_grad(b);
        T* gx = want_x ? t.grad(z).data() : nullptr;
        const std::size_t per_set = sets.front().len / spatial;
        std::vector<double> partial_g(want_affine ? sets.size() * per_set : 0, 0.0);
        std::vector<double> partial_b(want_affine ? sets.size() * per_set : 0, 0.0);
        const auto count_sets = static_cast<std::ptrdiff_t>(sets.size());

#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t si = 0; si < count_sets; ++si) {
          const PoolSet& set = sets[si];
          const SetStats& st = stats[si];
          const double count = static_cast<double>(set.len * set.blocks);
          double mean_gh = 0.0;
          double mean_gh_xh = 0.0;
          for_each_run(set, spatial, [&](std::size_t start, std::size_t c, std::size_t q) {
            double sum_gy = 0.0;
            double sum_gy_xh = 0.0;
            for (std::size_t s = 0; s < spatial; ++s) {
              const double xh = (xv[start + s] - st.mean) * st.inv_std;
              sum_gy += gy[start + s];
              sum_gy_xh += gy[start + s] * xh;
            }
            mean_gh += sum_gy * gam[c];
            mean_gh_xh += sum_gy_xh * gam[c];
            if (want_affine) {
              partial_g[si * per_set + q] += sum_gy_xh;
              partial_b[si * per_set + q] += sum_gy;
            }
          });
          if (!want_x) continue;
          mean_gh /= count;
          mean_gh_xh /= count;
          for_each_run(set, spatial, [&](std::size_t start, std::size_t c, std::size_t) {
            const double gc = gam[c];
            for (std::size_t s = 0; s < spatial; ++s) {
              const double xh = (xv[start + s] - st.mean) * st.inv_std;
              gx[start + s] += static_cast<T>(st.inv_std * (gy[start + s] * gc - mean_gh - xh * mean_gh_xh));
            }
          });
        }

        if (!want_affine) return;
        std::vector<double> sum_g(channels, 0.0);
        std::vector<double> sum_b(channels, 0.0);
        for (std::size_t si = 0; si < sets.size(); ++si) {
          for (std::size_t q = 0; q < per_set; ++q) {
            sum_g[sets[si].channel0 + q] += partial_g[si * per_set + q];
            sum_b[sets[si].channel0 + q] += partial_b[si * per_set + q];
          }
        }
        if (t.needs_grad(g)) {
          auto gg = t.grad(g);
          for (std::size_t c = 0; c < channels; ++c) gg[c] += static_cast<T>(sum_g[c]);
        }
        if (t.needs_grad(b)) {
          auto gb = t.grad(b);
          for (std::size_t c = 0; c < channels; ++c) gb[c] += static_cast<T>(sum_b[c]);
        }
      });
}

// Per-channel affine map with frozen running statistics: no pooling, so no
// cross-position gradient.
template <typename T>
Var population_norm(Tape<T>& tape, Var z, NormSpec<T>& spec) {
  if (spec.ema_updates == 0) {
    throw std::logic_error("norm: population statistics requested before any EMA update");
  }
  const Tensor3<T>& in = tape.value(z);
  const Shape3 shape = in.shape();
  const std::size_t channels = shape.c;
  std::vector<double> inv(channels);
  std::vector<double> mu(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    mu[c] = spec.running_mean[c];
    inv[c] = 1.0 / std::sqrt(static_cast<double>(spec.running_var[c]) + spec.epsilon);
  }
  Tensor3<T> out(shape);
  for (std::size_t n = 0; n < shape.n; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t s = 0; s < shape.s; ++s) {
        out(n, c, s) =
            static_cast<T>(spec.gamma[c] * ((in(n, c, s) - mu[c]) * inv[c]) + spec.beta[c]);
      }
    }
  }
  const Var g = tape.leaf(spec.gamma);
  const Var b = tape.leaf(spec.beta);
  const bool needs = tape.needs_grad(z) || tape.needs_grad(g) || tape.needs_grad(b);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::span<const T> gy) {
    const Tensor3<T>& xin = t.value(z);
    const auto gam = t.value(g).data();
    std::span<T> gx = t.needs_grad(z) ? t.grad(z) : std::span<T>{};
    std::vector<double> sum_g(channels, 0.0);
    std::vector<double> sum_b(channels, 0.0);
    for (std::size_t n = 0; n < shape.n; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t s = 0; s < shape.s; ++s) {
          const std::size_t i = (n * channels + c) * shape.s + s;
          const double xh = (xin[i] - mu[c]) * inv[c];
          sum_g[c] += gy[i] * xh;
          sum_b[c] += gy[i];
          if (!gx.empty()) gx[i] += static_cast<T>(gy[i] * gam[c] * inv[c]);
        }
      }
    }
    if (t.needs_grad(g)) {
      auto gg = t.grad(g);
      for (std::size_t c = 0; c < channels; ++c) gg[c] += static_cast<T>(sum_g[c]);
    }
    if (t.needs_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t c = 0; c < channels; ++c) gb[c] += static_cast<T>(sum_b[c]);
    }
  });
}

}  // namespace

template <typename T>
Var norm_forward(Tape<T>& tape, Var z, NormSpec<T>& spec, bool training) {
  const Shape3 shape = tape.shape(z);
  spec.validate(shape.c);
  if (spec.variant == NormVariant::Batch) {
    if (!training && spec.stats_mode == StatsMode::Population) {
      return population_norm(tape, z, spec);
    }
    return pooled_norm(tape, z, spec, batch_sets(shape), training);
  }
  return pooled_norm(tape, z, spec, group_sets(shape, spec.effective_groups()), false);
}

template <typename T>
Var packnorm_stacked(Tape<T>& tape, Var stacked, NormSpec<T>& spec) {
  const Shape3 shape = tape.shape(stacked);
  if (shape.n % 2 != 0) throw ShapeError("packnorm: stacked batch must be even");
  if (spec.gamma.size() != shape.c || spec.beta.size() != shape.c) {
    throw ShapeError("packnorm: affine parameters do not match channel count");
  }
  if (!(spec.epsilon > 0.0)) throw ShapeError("norm: epsilon must be positive");
  return pooled_norm(tape, stacked, spec, pack_sets(shape), false);
}

template <typename T>
std::pair<Var, Var> packnorm_forward(Tape<T>& tape, Var u, Var u_tilde, NormSpec<T>& spec) {
  if (tape.shape(u) != tape.shape(u_tilde)) {
    throw ShapeError("packnorm: paths have different shapes " + to_string(tape.shape(u)) +
                     " vs " + to_string(tape.shape(u_tilde)));
  }
  const Var joined = concat_batch(tape, u, u_tilde);
  return split_batch(tape, packnorm_stacked(tape, joined, spec));
}

template struct NormSpec<float>;
template struct NormSpec<double>;
template Var norm_forward<float>(Tape<float>&, Var, NormSpec<float>&, bool);
template Var norm_forward<double>(Tape<double>&, Var, NormSpec<double>&, bool);
template Var packnorm_stacked<float>(Tape<float>&, Var, NormSpec<float>&);
template Var packnorm_stacked<double>(Tape<double>&, Var, NormSpec<double>&);
template std::pair<Var, Var> packnorm_forward<float>(Tape<float>&, Var, Var, NormSpec<float>&);
template std::pair<Var, Var> packnorm_forward<double>(Tape<double>&, Var, Var, NormSpec<double>&);

}  // namespace normprobe
