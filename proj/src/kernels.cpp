// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include "modref/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace modref::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

template <typename T>
inline T at_a(const GemmShape& s, std::span<const T> a, std::size_t i, std::size_t p) {
    return s.trans_a == Transpose::No ? a[i * s.k + p] : a[p * s.m + i];
}

template <typename T>
inline T at_b(const GemmShape& s, std::span<const T> b, std::size_t p, std::size_t j) {
    return s.trans_b == Transpose::No ? b[p * s.n + j] : b[j * s.k + p];
}

template <typename T>
inline void gemm_row(const GemmShape& s, std::span<const T> a, std::span<const T> b,
                     std::span<T> c, std::size_t i) {
    T* row = c.data() + i * s.n;
    if (!s.accumulate) std::fill(row, row + s.n, T(0));
    if (s.trans_b == Transpose::No) {
        // i-p-j order keeps the innermost loop contiguous in B and C.
        for (std::size_t p = 0; p < s.k; ++p) {
            const T av = at_a(s, a, i, p);
            const T* brow = b.data() + p * s.n;
            for (std::size_t j = 0; j < s.n; ++j) row[j] += av * brow[j];
        }
    } else {
        for (std::size_t j = 0; j < s.n; ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < s.k; ++p) acc += at_a(s, a, i, p) * at_b(s, b, p, j);
            row[j] += acc;
        }
    }
}

template <typename T>
inline void softmax_row(std::size_t i, std::size_t cols, T temperature, const SoftmaxMask<T>& mask,
                        std::span<const T> in, std::span<T> out) {
    const T* x = in.data() + i * cols;
    T* y = out.data() + i * cols;
    const std::size_t visible = mask.causal ? std::min(cols, i + 1) : cols;
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < visible; ++j) {
        const T z = x[j] / temperature + (mask.key_bias.empty() ? T(0) : mask.key_bias[j]);
        y[j] = z;
        peak = std::max(peak, z);
    }
    T total = 0;
    for (std::size_t j = 0; j < visible; ++j) {
        y[j] = std::exp(y[j] - peak);
        total += y[j];
    }
    for (std::size_t j = 0; j < visible; ++j) y[j] /= total;
    for (std::size_t j = visible; j < cols; ++j) y[j] = 0;
}

template <typename T>
inline void layer_norm_row(std::size_t i, std::size_t cols, T eps, std::span<const T> in,
                           std::span<const T> gain, std::span<const T> bias, std::span<T> xhat,
                           std::span<T> inv_std, std::span<T> out) {
    const T* x = in.data() + i * cols;
    T mean = 0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[j];
    mean /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<T>(cols);
    const T r = T(1) / std::sqrt(var + eps);
    inv_std[i] = r;
    for (std::size_t j = 0; j < cols; ++j) {
        const T h = (x[j] - mean) * r;
        xhat[i * cols + j] = h;
        out[i * cols + j] = h * gain[j] + bias[j];
    }
}

}  // namespace

namespace serial {

template <typename T>
void gemm(const GemmShape& shape, std::span<const T> a, std::span<const T> b, std::span<T> c) {
    for (std::size_t i = 0; i < shape.m; ++i) gemm_row(shape, a, b, c, i);
}

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, T temperature, const SoftmaxMask<T>& mask,
                  std::span<const T> in, std::span<T> out) {
    for (std::size_t i = 0; i < rows; ++i) softmax_row(i, cols, temperature, mask, in, out);
}

template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t cols, T eps, std::span<const T> in,
                     std::span<const T> gain, std::span<const T> bias, std::span<T> xhat,
                     std::span<T> inv_std, std::span<T> out) {
    for (std::size_t i = 0; i < rows; ++i)
        layer_norm_row(i, cols, eps, in, gain, bias, xhat, inv_std, out);
}

}  // namespace serial

template <typename T>
void gemm(const GemmShape& shape, std::span<const T> a, std::span<const T> b, std::span<T> c) {
    const auto rows = static_cast<std::ptrdiff_t>(shape.m);
    [[maybe_unused]] const bool wide = shape.m * shape.n * shape.k >= kParallelWork && shape.m > 1;
#pragma omp parallel for schedule(static) if (wide)
    for (std::ptrdiff_t i = 0; i < rows; ++i)
        gemm_row(shape, a, b, c, static_cast<std::size_t>(i));
}

template <typename T>
void softmax_rows(std::size_t rows, std::size_t cols, T temperature, const SoftmaxMask<T>& mask,
                  std::span<const T> in, std::span<T> out) {
    const auto n = static_cast<std::ptrdiff_t>(rows);
    [[maybe_unused]] const bool wide = rows * cols >= kParallelWork / 8 && rows > 1;
#pragma omp parallel for schedule(static) if (wide)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        softmax_row(static_cast<std::size_t>(i), cols, temperature, mask, in, out);
}

template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t cols, T eps, std::span<const T> in,
                     std::span<const T> gain, std::span<const T> bias, std::span<T> xhat,
                     std::span<T> inv_std, std::span<T> out) {
    const auto n = static_cast<std::ptrdiff_t>(rows);
    [[maybe_unused]] const bool wide = rows * cols >= kParallelWork / 8 && rows > 1;
#pragma omp parallel for schedule(static) if (wide)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        layer_norm_row(static_cast<std::size_t>(i), cols, eps, in, gain, bias, xhat, inv_std, out);
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_max_threads(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

#define MODREF_INSTANTIATE_KERNELS(T)                                                              \
    template void serial::gemm<T>(const GemmShape&, std::span<const T>, std::span<const T>,        \
                                  std::span<T>);                                                   \
    template void serial::softmax_rows<T>(std::size_t, std::size_t, T, const SoftmaxMask<T>&,      \
                                          std::span<const T>, std::span<T>);                       \
    template void serial::layer_norm_rows<T>(std::size_t, std::size_t, T, std::span<const T>,      \
                                             std::span<const T>, std::span<const T>, std::span<T>, \
                                             std::span<T>, std::span<T>);                          \
    template void gemm<T>(const GemmShape&, std::span<const T>, std::span<const T>, std::span<T>); \
    template void softmax_rows<T>(std::size_t, std::size_t, T, const SoftmaxMask<T>&,              \
                                  std::span<const T>, std::span<T>);                               \
    template void layer_norm_rows<T>(std::size_t, std::size_t, T, std::span<const T>,              \
                                     std::span<const T>, std::span<const T>, std::span<T>,         \
                                     std::span<T>, std::span<T>);

MODREF_INSTANTIATE_KERNELS(float)
MODREF_INSTANTIATE_KERNELS(double)

}  // namespace modref::kernels
