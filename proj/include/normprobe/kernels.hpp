// SPDX-License-Identifier: Apache-2.0
//
// Dense compute kernels behind the differentiable ops.
//
// Two implementations share every signature: `reference` is a plain serial
// loop nest used as the test oracle, the default namespace is the OpenMP +
// GEMM version used in training. Results of the parallel kernels are
// independent of the thread count: reductions over the batch go through
// per-sample partials summed in batch order.
#pragma once

#include <cstddef>
#include <span>

namespace normprobe::kernels {

struct ConvDims {
  std::size_t n = 0;
  std::size_t cin = 0;
  std::size_t cout = 0;
  std::size_t s_in = 0;
  std::size_t k = 0;
  std::size_t pad = 0;

  std::size_t s_out() const { return s_in + 2 * pad - k + 1; }
};

struct LinearDims {
  std::size_t rows = 0;
  std::size_t in = 0;
  std::size_t out = 0;
};

// Layouts: x (n, cin, s_in), w (cout, cin, k), b (cout), y (n, cout, s_out).
// Backward kernels accumulate into their outputs; an empty span is skipped.

template <typename T>
void conv1d_forward(const ConvDims& dims, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y);
template <typename T>
void conv1d_backward(const ConvDims& dims, std::span<const T> x, std::span<const T> w,
                     std::span<const T> gy, std::span<T> gx, std::span<T> gw, std::span<T> gb);

// Layouts: x (rows, in), w (out, in), b (out), y (rows, out).
template <typename T>
void linear_forward(const LinearDims& dims, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y);
template <typename T>
void linear_backward(const LinearDims& dims, std::span<const T> x, std::span<const T> w,
                     std::span<const T> gy, std::span<T> gx, std::span<T> gw, std::span<T> gb);

namespace reference {

template <typename T>
void conv1d_forward(const ConvDims& dims, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y);
template <typename T>
void conv1d_backward(const ConvDims& dims, std::span<const T> x, std::span<const T> w,
                     std::span<const T> gy, std::span<T> gx, std::span<T> gw, std::span<T> gb);
template <typename T>
void linear_forward(const LinearDims& dims, std::span<const T> x, std::span<const T> w,
                    std::span<const T> b, std::span<T> y);
template <typename T>
void linear_backward(const LinearDims& dims, std::span<const T> x, std::span<const T> w,
                     std::span<const T> gy, std::span<T> gx, std::span<T> gw, std::span<T> gb);

}  // namespace reference

/// Threads the parallel kernels will use (1 when built without OpenMP).
int max_threads();

}  // namespace normprobe::kernels
