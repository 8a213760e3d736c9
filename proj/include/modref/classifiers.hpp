// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modref/archive.hpp"
#include "modref/tensor.hpp"

namespace modref {

enum class ClassifierKind { Text, Vision, MultiModal };

std::string_view to_string(ClassifierKind kind);

inline constexpr double kDefaultTauT = 0.01;

template <typename T>
struct ClassifierBank {
    std::optional<Tensor<T>> text;        // w_T
    std::optional<Tensor<T>> vision;      // w_V
    std::optional<Tensor<T>> multimodal;  // w_VT
    T tau_t = T(kDefaultTauT);
    std::vector<std::string> class_ids;

    bool has(ClassifierKind kind) const;
    /// Throws ReferenceError when the matrix was not built.
    const Tensor<T>& weights(ClassifierKind kind) const;
    std::size_t num_classes() const;
    std::size_t dim() const;
    /// At least one matrix, shared C x d, tau_t > 0.
    void validate() const;

    /// "bank.w_T", "bank.w_V", "bank.w_VT", "bank.tau_t"; class ids in metadata.
    void save(dataio::TensorArchive& archive) const;
    static ClassifierBank load(const dataio::TensorArchive& archive);
};

/// probs[n, k] = softmax_k(cos(features[n], weights[k]) / tau_t). Feature rows
/// are normalized here; weight rows must already be unit norm.
template <typename T>
Tensor<T> classify(const Tensor<T>& weights, const Tensor<T>& features, T tau_t);

/// Argmax per row; ties go to the lowest index.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& scores);

template <typename T>
struct Prediction {
    Tensor<T> probs;
    std::vector<std::size_t> labels;
};

template <typename T>
Prediction<T> predict(const ClassifierBank<T>& bank, const Tensor<T>& features, ClassifierKind kind);

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

}  // namespace modref
