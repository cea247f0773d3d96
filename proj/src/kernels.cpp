// SPDX-License-Identifier: Apache-2.0
#include "normprobe/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace normprobe::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// col[(ci * k + j) * s_out + s] = x[ci, s + j - pad], zero outside the sequence.
template <typename T>
void im2col(const ConvDims& d, const T* x, T* col) {
  const std::size_t so = d.s_out();
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    const T* row_in = x + ci * d.s_in;
    for (std::size_t j = 0; j < d.k; ++j) {
      T* row = col + (ci * d.k + j) * so;
      // Valid output positions satisfy 0 <= s + j - pad < s_in.
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(d.pad);
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(so),
                                                         static_cast<std::ptrdiff_t>(d.s_in) - shift);
      if (hi <= lo) {
        std::fill(row, row + so, T(0));
        continue;
      }
      std::fill(row, row + lo, T(0));
      std::memcpy(row + lo, row_in + lo + shift, static_cast<std::size_t>(hi - lo) * sizeof(T));
      std::fill(row + hi, row + so, T(0));
    }
  }
}

template <typename T>
void col2im_add(const ConvDims& d, const T* col, T* gx) {
  const std::size_t so = d.s_out();
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    T* row_out = gx + ci * d.s_in;
    for (std::size_t j = 0; j < d.k; ++j) {
      const T* row = col + (ci * d.k + j) * so;
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(d.pad);
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(so),
                                                         static_cast<std::ptrdiff_t>(d.s_in) - shift);
      for (std::ptrdiff_t s = lo; s < hi; ++s) row_out[s + shift] += row[s];
    }
  }
}

constexpr std::size_t kRowBlock = 512;

}  // namespace

int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void conv1d_forward(const ConvDims& d, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y) {
  const std::size_t so = d.s_out();
  const std::size_t taps = d.cin * d.k;
  const ConstMapMat<T> wm(w.data(), d.cout, taps);
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(b.data(), d.cout);
  const auto batch = static_cast<std::ptrdiff_t>(d.n);

#pragma omp parallel
  {
    std::vector<T> col(taps * so);
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < batch; ++n) {
      im2col(d, x.data() + n * d.cin * d.s_in, col.data());
      MapMat<T> ym(y.data() + n * d.cout * so, d.cout, so);
      ym.noalias() = wm * ConstMapMat<T>(col.data(), taps, so);
      ym.colwise() += bv;
    }
  }
}

template <typename T>
void conv1d_backward(const ConvDims& d, std::span<const T> x, std::span<const T> w,
                     std::span<const T> gy, std::span<T> gx, std::span<T> gw, std::span<T> gb) {
  const std::size_t so = d.s_out();
  const std::size_t taps = d.cin * d.k;
  const std::size_t wsize = d.cout * taps;
  const ConstMapMat<T> wm(w.data(), d.cout, taps);
  const auto batch = static_cast<std::ptrdiff_t>(d.n);
  const bool want_w = !gw.empty();
  const bool want_b = !gb.empty();
  const bool want_x = !gx.empty();

  std::vector<T> partial_w(want_w ? d.n * wsize : 0);
  std::vector<T> partial_b(want_b ? d.n * d.cout : 0);

#pragma omp parallel
  {
    std::vector<T> col(taps * so);
#pragma omp for schedule(static)
    for (std::ptrdiff_t n = 0; n < batch; ++n) {
      const ConstMapMat<T> gym(gy.data() + n * d.cout * so, d.cout, so);
      if (want_x) {
        MapMat<T> gcol(col.data(), taps, so);
        gcol.noalias() = wm.transpose() * gym;
        col2im_add(d, col.data(), gx.data() + n * d.cin * d.s_in);
      }
      if (want_w) {
        im2col(d, x.data() + n * d.cin * d.s_in, col.data());
        MapMat<T> pw(partial_w.data() + n * wsize, d.cout, taps);
        pw.noalias() = gym * ConstMapMat<T>(col.data(), taps, so).transpose();
      }
      if (want_b) {
        const T* g = gy.data() + n * d.cout * so;
        for (std::size_t co = 0; co < d.cout; ++co) {
          T acc = T(0);
          for (std::size_t s = 0; s < so; ++s) acc += g[co * so + s];
          partial_b[n * d.cout + co] = acc;
        }
      }
    }
  }

  for (std::size_t n = 0; n < d.n; ++n) {
    if (want_w) {
      const T* p = partial_w.data() + n * wsize;
      for (std::size_t i = 0; i < wsize; ++i) gw[i] += p[i];
    }
    if (want_b) {
      for (std::size_t co = 0; co < d.cout; ++co) gb[co] += partial_b[n * d.cout + co];
    }
  }
}

template <typename T>
void linear_forward(const LinearDims& d, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y) {
  const ConstMapMat<T> wm(w.data(), d.out, d.in);
  const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(b.data(), d.out);
  const auto blocks = static_cast<std::ptrdiff_t>((d.rows + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t r0 = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t nr = std::min(kRowBlock, d.rows - r0);
    MapMat<T> ym(y.data() + r0 * d.out, nr, d.out);
    ym.noalias() = ConstMapMat<T>(x.data() + r0 * d.in, nr, d.in) * wm.transpose();
    ym.rowwise() += bv;
  }
}

template <typename T>
void linear_backward(const LinearDims& d, std::span<const T> x, std::span<const T> w,
                     std::span<const T> gy, std::span<T> gx, std::span<T> gw, std::span<T> gb) {
  const ConstMapMat<T> wm(w.data(), d.out, d.in);
  if (!gx.empty()) {
    const auto blocks = static_cast<std::ptrdiff_t>((d.rows + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
      const std::size_t r0 = static_cast<std::size_t>(blk) * kRowBlock;
      const std::size_t nr = std::min(kRowBlock, d.rows - r0);
      MapMat<T> gxm(gx.data() + r0 * d.in, nr, d.in);
      gxm.noalias() += ConstMapMat<T>(gy.data() + r0 * d.out, nr, d.out) * wm;
    }
  }
  const ConstMapMat<T> gym(gy.data(), d.rows, d.out);
  if (!gw.empty()) {
    MapMat<T> gwm(gw.data(), d.out, d.in);
    gwm.noalias() += gym.transpose() * ConstMapMat<T>(x.data(), d.rows, d.in);
  }
  if (!gb.empty()) {
    for (std::size_t r = 0; r < d.rows; ++r) {
      const T* g = gy.data() + r * d.out;
      for (std::size_t o = 0; o < d.out; ++o) gb[o] += g[o];
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

}  // namespace normprobe::kernels
