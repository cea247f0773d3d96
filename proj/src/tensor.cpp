// SPDX-License-Identifier: Apache-2.0
#include "normprobe/tensor.hpp"

#include <cmath>

#include "normprobe/rng.hpp"

namespace normprobe {

std::string to_string(const Shape3& shape) {
  return "(" + std::to_string(shape.n) + ", " + std::to_string(shape.c) + ", " +
         std::to_string(shape.s) + ")";
}

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void require_finite(const Tensor3<T>& t, const char* what) {
  if (!all_finite(t.data())) throw std::runtime_error(std::string("non-finite values in ") + what);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double scale = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * scale;
  has_spare_ = true;
  return u * scale;
}

Rng Rng::fork(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

template <typename T>
Tensor3<T> gaussian(Rng& rng, Shape3 shape) {
  Tensor3<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(rng.normal());
  return out;
}

template <typename T>
Tensor3<T> uniform(Rng& rng, Shape3 shape, double lo, double hi) {
  Tensor3<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

template bool all_finite<float>(std::span<const float>);
template bool all_finite<double>(std::span<const double>);
template void require_finite<float>(const Tensor3<float>&, const char*);
template void require_finite<double>(const Tensor3<double>&, const char*);
template Tensor3<float> gaussian<float>(Rng&, Shape3);
template Tensor3<double> gaussian<double>(Rng&, Shape3);
template Tensor3<float> uniform<float>(Rng&, Shape3, double, double);
template Tensor3<double> uniform<double>(Rng&, Shape3, double, double);

}  // namespace normprobe
