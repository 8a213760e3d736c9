// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "modref/rng.hpp"
#include "modref/tensor.hpp"

namespace modref {

// Every op checks its output for NaN/Inf and throws NumericError.
// Shapes: "rows x cols" means any tensor whose last dim is cols.

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
/// x[rows x n] + bias[n] broadcast over rows.
template <typename T> Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

/// Row softmax of x / temperature.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, T temperature);
/// Softmax with a causal mask and/or a constant additive per-column bias.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, T temperature, bool causal,
                         std::span<const T> key_bias = {});

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5));

/// Exact (erf) GELU.
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

enum class DropoutMode {
    Element,  // independent Bernoulli per entry
    Channel,  // one draw per column, shared by all rows
    Path,     // one draw for the whole tensor (drop-path on a residual branch)
};

/// Train mode (`rng` non-null): multiply by a Bernoulli keep-mask scaled by
/// 1/(1-p). Eval mode (`rng` null) or p == 0: identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, DropoutMode mode, Rng* rng);

template <typename T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);

/// Unit L2 norm per row. Zero rows throw DegenerateInputError.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x);

/// -mean(log(max(probs[i, labels[i]], 1e-12))).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const std::size_t> labels);

struct AttentionOptions {
    std::size_t heads = 1;
    bool causal = false;
};

/// softmax(Q K^T / sqrt(d_head) + key_bias) V per head, heads concatenated.
template <typename T>
Tensor<T> attention(const Tensor<T>& queries, const Tensor<T>& keys, const Tensor<T>& values,
                    const AttentionOptions& options, std::span<const T> key_bias = {});

/// Convert a tensor between precisions (no gradient link).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
    std::vector<To> out(x.data().begin(), x.data().end());
    return Tensor<To>(x.dims(), std::move(out));
}

}  // namespace modref
