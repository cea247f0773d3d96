// SPDX-License-Identifier: Apache-2.0
#include "normprobe/ops.hpp"

#include <algorithm>

#include "normprobe/kernels.hpp"

namespace normprobe {

namespace {

template <typename T>
std::span<T> grad_if_needed(Tape<T>& tape, Var v) {
  return tape.needs_grad(v) ? tape.grad(v) : std::span<T>{};
}

template <typename T>
void require_same_shape(const Tape<T>& tape, Var a, Var b, const char* op) {
  if (tape.shape(a) != tape.shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(tape.shape(a)) + " vs " +
                     to_string(tape.shape(b)));
  }
}

}  // namespace

template <typename T>
Var conv1d(Tape<T>& tape, Var x, Var weight, Var bias, std::size_t padding) {
  const Shape3 xs = tape.shape(x);
  const Shape3 ws = tape.shape(weight);
  if (ws.s % 2 == 0) throw ShapeError("conv1d: kernel size must be odd, got " + std::to_string(ws.s));
  if (ws.c != xs.c) {
    throw ShapeError("conv1d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                     std::to_string(ws.c));
  }
  if (tape.value(bias).size() != ws.n) throw ShapeError("conv1d: bias length must equal Cout");
  if (padding != 0 && padding != ws.s / 2) {
    throw ShapeError("conv1d: padding must be 0 or floor(k/2)");
  }
  if (xs.s + 2 * padding < ws.s) throw ShapeError("conv1d: sequence shorter than kernel");

  const kernels::ConvDims dims{xs.n, xs.c, ws.n, xs.s, ws.s, padding};
  Tensor3<T> out(Shape3{xs.n, ws.n, dims.s_out()});
  kernels::conv1d_forward<T>(dims, tape.value(x).data(), tape.value(weight).data(),
                             tape.value(bias).data(), out.data());

  const bool needs = tape.needs_grad(x) || tape.needs_grad(weight) || tape.needs_grad(bias);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::span<const T> gy) {
    kernels::conv1d_backward<T>(dims, t.value(x).data(), t.value(weight).data(), gy,
                                grad_if_needed(t, x), grad_if_needed(t, weight),
                                grad_if_needed(t, bias));
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  const auto& in = tape.value(x);
  Tensor3<T> out(in.shape());
  std::transform(in.data().begin(), in.data().end(), out.data().begin(),
                 [](T v) { return v > T(0) ? v : T(0); });
  return tape.record(std::move(out), tape.needs_grad(x), [=](Tape<T>& t, std::span<const T> gy) {
    const auto xin = t.value(x).data();
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xin[i] > T(0)) gx[i] += gy[i];
    }
  });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias) {
  const Shape3 xs = tape.shape(x);
  const Shape3 ws = tape.shape(weight);
  if (xs.s != 1 || ws.s != 1) throw ShapeError("linear: expects (rows, features, 1) layouts");
  if (ws.c != xs.c) {
    throw ShapeError("linear: input width " + std::to_string(xs.c) + " but weight expects " +
                     std::to_string(ws.c));
  }
  if (tape.value(bias).size() != ws.n) throw ShapeError("linear: bias length must equal out");

  const kernels::LinearDims dims{xs.n, xs.c, ws.n};
  Tensor3<T> out(Shape3{xs.n, ws.n, 1});
  kernels::linear_forward<T>(dims, tape.value(x).data(), tape.value(weight).data(),
                             tape.value(bias).data(), out.data());
  const bool needs = tape.needs_grad(x) || tape.needs_grad(weight) || tape.needs_grad(bias);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::span<const T> gy) {
    kernels::linear_backward<T>(dims, t.value(x).data(), t.value(weight).data(), gy,
                                grad_if_needed(t, x), grad_if_needed(t, weight),
                                grad_if_needed(t, bias));
  });
}

template <typename T>
Var mse(Tape<T>& tape, Var pred, Var target) {
  require_same_shape(tape, pred, target, "mse");
  const auto p = tape.value(pred).data();
  const auto y = tape.value(target).data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double diff = static_cast<double>(p[i]) - static_cast<double>(y[i]);
    acc += diff * diff;
  }
  const double count = static_cast<double>(p.size());
  Tensor3<T> out(Shape3{1, 1, 1}, static_cast<T>(acc / count));
  const bool needs = tape.needs_grad(pred) || tape.needs_grad(target);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::span<const T> g) {
    const auto pv = t.value(pred).data();
    const auto yv = t.value(target).data();
    const T coeff = static_cast<T>(2.0 / count) * g[0];
    if (t.needs_grad(pred)) {
      auto gp = t.grad(pred);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += coeff * (pv[i] - yv[i]);
    }
    if (t.needs_grad(target)) {
      auto gt = t.grad(target);
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= coeff * (pv[i] - yv[i]);
    }
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  double acc = 0.0;
  for (T v : tape.value(x).data()) acc += v;
  return tape.record(Tensor3<T>(Shape3{1, 1, 1}, static_cast<T>(acc)), tape.needs_grad(x),
                     [=](Tape<T>& t, std::span<const T> g) {
                       for (auto& gx : t.grad(x)) gx += g[0];
                     });
}

template <typename T>
Var mean(Tape<T>& tape, Var x) {
  return scale(tape, sum(tape, x), T(1) / static_cast<T>(tape.value(x).size()));
}

template <typename T>
Var dot(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "dot");
  const auto av = tape.value(a).data();
  const auto bv = tape.value(b).data();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += static_cast<double>(av[i]) * bv[i];
  const bool needs = tape.needs_grad(a) || tape.needs_grad(b);
  return tape.record(Tensor3<T>(Shape3{1, 1, 1}, static_cast<T>(acc)), needs,
                     [=](Tape<T>& t, std::span<const T> g) {
                       const auto ax = t.value(a).data();
                       const auto bx = t.value(b).data();
                       if (t.needs_grad(a)) {
                         auto ga = t.grad(a);
                         for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * bx[i];
                       }
                       if (t.needs_grad(b)) {
                         auto gb = t.grad(b);
                         for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[0] * ax[i];
                       }
                     });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  Tensor3<T> out = tape.value(x).detached();
  for (auto& v : out.data()) v *= factor;
  return tape.record(std::move(out), tape.needs_grad(x), [=](Tape<T>& t, std::span<const T> g) {
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * g[i];
  });
}

template <typename T>
Var concat_batch(Tape<T>& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "concat_batch");
  const Shape3 s = tape.shape(a);
  std::vector<T> data;
  data.reserve(2 * s.numel());
  const auto av = tape.value(a).data();
  const auto bv = tape.value(b).data();
  data.insert(data.end(), av.begin(), av.end());
  data.insert(data.end(), bv.begin(), bv.end());
  const std::size_t half = s.numel();
  const bool needs = tape.needs_grad(a) || tape.needs_grad(b);
  return tape.record(Tensor3<T>(Shape3{2 * s.n, s.c, s.s}, std::move(data)), needs,
                     [=](Tape<T>& t, std::span<const T> g) {
                       if (t.needs_grad(a)) {
                         auto ga = t.grad(a);
                         for (std::size_t i = 0; i < half; ++i) ga[i] += g[i];
                       }
                       if (t.needs_grad(b)) {
                         auto gb = t.grad(b);
                         for (std::size_t i = 0; i < half; ++i) gb[i] += g[half + i];
                       }
                     });
}

template <typename T>
std::pair<Var, Var> split_batch(Tape<T>& tape, Var x) {
  const Shape3 s = tape.shape(x);
  if (s.n % 2 != 0) throw ShapeError("split_batch: batch must be even");
  const Shape3 hs{s.n / 2, s.c, s.s};
  const std::size_t half = hs.numel();
  const auto xv = tape.value(x).data();
  auto make = [&](std::size_t offset) {
    std::vector<T> data(xv.begin() + static_cast<std::ptrdiff_t>(offset),
                        xv.begin() + static_cast<std::ptrdiff_t>(offset + half));
    return tape.record(Tensor3<T>(hs, std::move(data)), tape.needs_grad(x),
                       [=](Tape<T>& t, std::span<const T> g) {
                         auto gx = t.grad(x);
                         for (std::size_t i = 0; i < half; ++i) gx[offset + i] += g[i];
                       });
  };
  const Var first = make(0);
  const Var second = make(half);
  return {first, second};
}

#define NORMPROBE_INSTANTIATE(T)                                              \
  template Var conv1d<T>(Tape<T>&, Var, Var, Var, std::size_t);               \
  template Var relu<T>(Tape<T>&, Var);                                        \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                            \
  template Var mse<T>(Tape<T>&, Var, Var);                                    \
  template Var sum<T>(Tape<T>&, Var);                                         \
  template Var mean<T>(Tape<T>&, Var);                                        \
  template Var dot<T>(Tape<T>&, Var, Var);                                    \
  template Var scale<T>(Tape<T>&, Var, T);                                    \
  template Var concat_batch<T>(Tape<T>&, Var, Var);                           \
  template std::pair<Var, Var> split_batch<T>(Tape<T>&, Var);

NORMPROBE_INSTANTIATE(float)
NORMPROBE_INSTANTIATE(double)
#undef NORMPROBE_INSTANTIATE

}  // namespace normprobe
