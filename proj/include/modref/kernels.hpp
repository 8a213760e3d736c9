// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major kernels behind the tensor ops. Each kernel exists twice:
// `serial::` is the plain reference loop nest, the unqualified version is the
// OpenMP build used by the library. Work is split over output rows only and
// each row keeps the serial summation order, so both produce bitwise equal
// results for any thread count.

#pragma once

#include <cstddef>
#include <span>

namespace modref::kernels {

enum class Transpose { No, Yes };

/// Shape of a (possibly transposed) GEMM: C[m x n] (+)= op(A)[m x k] * op(B)[k x n].
struct GemmShape {
    std::size_t m = 0;
    std::size_t n = 0;
    std::size_t k = 0;
    Transpose trans_a = Transpose::No;
    Transpose trans_b = Transpose::No;
    bool accumulate = false;
};

/// Per-row masking for softmax. `causal` hides column j > row i; `key_bias`
/// (length = cols, or empty) is added to every row after temperature scaling.
template <typename T>
struct SoftmaxMask {
    bool causal = false;
    std::span<const T> key_bias{};
};

namespace serial {

template <typename T>
void gemm(const GemmShape& shape, std::span<const T> a, std::span<const T> b, std::span<T> c);

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, T temperature, const SoftmaxMask<T>& mask,
                  std::span<const T> in, std::span<T> out);

/// Writes normalized rows (pre-affine) into `xhat` and 1/sqrt(var + eps) into `inv_std`.
template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t cols, T eps, std::span<const T> in,
                     std::span<const T> gain, std::span<const T> bias, std::span<T> xhat,
                     std::span<T> inv_std, std::span<T> out);

}  // namespace serial

template <typename T>
void gemm(const GemmShape& shape, std::span<const T> a, std::span<const T> b, std::span<T> c);

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, T temperature, const SoftmaxMask<T>& mask,
                  std::span<const T> in, std::span<T> out);

template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t cols, T eps, std::span<const T> in,
                     std::span<const T> gain, std::span<const T> bias, std::span<T> xhat,
                     std::span<T> inv_std, std::span<T> out);

/// Threads the parallel kernels may use (1 when built without OpenMP).
int max_threads();
void set_max_threads(int threads);

}  // namespace modref::kernels
