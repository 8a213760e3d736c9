// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter-free preference fusion of the text (T), vision (V) and
// multi-modal (VT) classifiers. Each classifier is validated on the exemplar
// images; per-class metric scores are softmaxed with temperature tau_p into
// per-class mixing weights.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modref/classifiers.hpp"
#include "modref/tensor.hpp"

namespace modref {

enum class PreferenceMetric { F1, Precision, Recall, Mean };

std::string_view to_string(PreferenceMetric metric);
/// Throws ValidationError on unknown names.
PreferenceMetric parse_metric(std::string_view name);

inline constexpr double kDefaultTauP = 10.0;

/// One-vs-rest score per class. 0/0 counts as 0. `Mean` yields all ones.
std::vector<double> per_class_metric(std::span<const std::size_t> predicted,
                                     std::span<const std::size_t> labels, std::size_t num_classes,
                                     PreferenceMetric metric);

/// Column order everywhere: V, VT, T.
struct PreferenceWeights {
    Tensor<double> alpha;      // C x 3 raw scores in [0, 1]
    Tensor<double> alpha_hat;  // C x 3 row-softmax of tau_p * alpha
    double tau_p = kDefaultTauP;
    PreferenceMetric metric = PreferenceMetric::F1;

    std::size_t num_classes() const { return alpha.rows(); }
};

PreferenceWeights preference_weights(std::span<const double> alpha_vision,
                                     std::span<const double> alpha_multimodal,
                                     std::span<const double> alpha_text, double tau_p,
                                     PreferenceMetric metric = PreferenceMetric::F1);

struct FusedPrediction {
    Tensor<double> scores;  // N x C, rows need not sum to 1
    std::vector<std::size_t> labels;

    /// Rows rescaled to sum to 1; argmax is unchanged.
    Tensor<double> normalized() const;
};

template <typename T>
FusedPrediction fuse_predict(const Tensor<T>& probs_vision, const Tensor<T>& probs_multimodal,
                             const Tensor<T>& probs_text, const PreferenceWeights& weights);

template <typename T>
class FusedClassifier {
public:
    FusedClassifier(ClassifierBank<T> bank, PreferenceWeights weights)
        : bank_(std::move(bank)), weights_(std::move(weights)) {}

    FusedPrediction predict(const Tensor<T>& features) const;
    const PreferenceWeights& preferences() const { return weights_; }
    const ClassifierBank<T>& bank() const { return bank_; }

private:
    ClassifierBank<T> bank_;
    PreferenceWeights weights_;
};

/// Validates T/V/VT on the pooled exemplars (the same ones that built the
/// bank) and returns the fused predictor. Every class needs >= 1 exemplar.
template <typename T>
FusedClassifier<T> build_fused_classifier(const ClassifierBank<T>& bank, const Tensor<T>& exemplar_features,
                                          std::span<const std::size_t> exemplar_labels, double tau_p,
                                          PreferenceMetric metric);

}  // namespace modref
