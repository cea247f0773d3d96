// SPDX-License-Identifier: Apache-2.0
#include "normprobe/adam.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace normprobe {

template <typename T>
AdamState<T>::AdamState(AdamConfig cfg, const std::vector<Tensor3<T>*>& params) : config(cfg) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const auto* p : params) {
    first_moment.emplace_back(p->shape());
    second_moment.emplace_back(p->shape());
  }
}

template <typename T>
void adam_step(const std::vector<Tensor3<T>*>& params, AdamState<T>& state) {
  if (params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: parameter count does not match optimizer state");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != state.first_moment[i].shape()) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " changed shape");
    }
    if (params[i]->has_grad() && !all_finite<T>(std::as_const(*params[i]).grad())) {
      throw NonFiniteError("adam_step: non-finite gradient in parameter " + std::to_string(i) +
                           " at step " + std::to_string(state.step + 1));
    }
  }

  ++state.step;
  const auto& cfg = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor3<T>& p = *params[i];
    // Parameters that never received a gradient are skipped entirely.
    if (!p.has_grad()) continue;
    const std::span<const T> g = std::as_const(p).grad();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    auto w = p.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / correction1;
      const double vhat = vj / correction2;
      w[j] = static_cast<T>(w[j] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(const std::vector<Tensor3<float>*>&, AdamState<float>&);
template void adam_step<double>(const std::vector<Tensor3<double>*>&, AdamState<double>&);

}  // namespace normprobe
