// SPDX-License-Identifier: Apache-2.0
#include "normprobe/kernels.hpp"

namespace normprobe::kernels::reference {

template <typename T>
void conv1d_forward(const ConvDims& d, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y) {
  const std::size_t so = d.s_out();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.cout; ++co) {
      for (std::size_t s = 0; s < so; ++s) {
        T acc = b[co];
        for (std::size_t ci = 0; ci < d.cin; ++ci) {
          for (std::size_t j = 0; j < d.k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s + j) -
                                       static_cast<std::ptrdiff_t>(d.pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(d.s_in)) continue;
            acc += w[(co * d.cin + ci) * d.k + j] * x[(n * d.cin + ci) * d.s_in + src];
          }
        }
        y[(n * d.cout + co) * so + s] = acc;
      }
    }
  }
}

template <typename T>
void conv1d_backward(const ConvDims& d, std::span<const T> x, std::span<const T> w,
                     std::span<const T> gy, std::span<T> gx, std::span<T> gw, std::span<T> gb) {
  const std::size_t so = d.s_out();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.cout; ++co) {
      for (std::size_t s = 0; s < so; ++s) {
        const T g = gy[(n * d.cout + co) * so + s];
        if (!gb.empty()) gb[co] += g;
        for (std::size_t ci = 0; ci < d.cin; ++ci) {
          for (std::size_t j = 0; j < d.k; ++j) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(s + j) -
                                       static_cast<std::ptrdiff_t>(d.pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(d.s_in)) continue;
            const std::size_t xi = (n * d.cin + ci) * d.s_in + src;
            const std::size_t wi = (co * d.cin + ci) * d.k + j;
            if (!gw.empty()) gw[wi] += g * x[xi];
            if (!gx.empty()) gx[xi] += g * w[wi];
          }
        }
      }
    }
  }
}

template <typename T>
void linear_forward(const LinearDims& d, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y) {
  for (std::size_t r = 0; r < d.rows; ++r) {
    for (std::size_t o = 0; o < d.out; ++o) {
      T acc = b[o];
      for (std::size_t i = 0; i < d.in; ++i) acc += w[o * d.in + i] * x[r * d.in + i];
      y[r * d.out + o] = acc;
    }
  }
}

template <typename T>
void linear_backward(const LinearDims& d, std::span<const T> x, std::span<const T> w,
                     std::span<const T> gy, std::span<T> gx, std::span<T> gw, std::span<T> gb) {
  for (std::size_t r = 0; r < d.rows; ++r) {
    for (std::size_t o = 0; o < d.out; ++o) {
      const T g = gy[r * d.out + o];
      if (!gb.empty()) gb[o] += g;
      for (std::size_t i = 0; i < d.in; ++i) {
        if (!gw.empty()) gw[o * d.in + i] += g * x[r * d.in + i];
        if (!gx.empty()) gx[r * d.in + i] += g * w[o * d.in + i];
      }
    }
  }
}

#define NORMPROBE_INSTANTIATE(T)                                                                \
  template void conv1d_forward<T>(const ConvDims&, std::span<const T>, std::span<const T>,     \
                                  std::span<const T>, std::span<T>);                           \
  template void conv1d_backward<T>(const ConvDims&, std::span<const T>, std::span<const T>,    \
                                   std::span<const T>, std::span<T>, std::span<T>,             \
                                   std::span<T>);                                              \
  template void linear_forward<T>(const LinearDims&, std::span<const T>, std::span<const T>,   \
                                  std::span<const T>, std::span<T>);                           \
  template void linear_backward<T>(const LinearDims&, std::span<const T>, std::span<const T>,  \
                                   std::span<const T>, std::span<T>, std::span<T>, std::span<T>);

NORMPROBE_INSTANTIATE(float)
NORMPROBE_INSTANTIATE(double)
#undef NORMPROBE_INSTANTIATE

}  // namespace normprobe::kernels::reference
