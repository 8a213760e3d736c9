// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include "modref/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "modref/errors.hpp"

namespace modref {

std::string_view to_string(PreferenceMetric metric) {
    switch (metric) {
        case PreferenceMetric::F1: return "f1";
        case PreferenceMetric::Precision: return "precision";
        case PreferenceMetric::Recall: return "recall";
        case PreferenceMetric::Mean: return "mean";
    }
    return "?";
}

PreferenceMetric parse_metric(std::string_view name) {
    for (auto m : {PreferenceMetric::F1, PreferenceMetric::Precision, PreferenceMetric::Recall, PreferenceMetric::Mean})
        if (to_string(m) == name) return m;
    throw ValidationError("unknown metric '" + std::string(name) + "' (expected f1|precision|recall|mean)");
}

namespace {

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::vector<double> per_class_metric(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                                     std::size_t num_classes, PreferenceMetric metric) {
    if (predicted.empty() || labels.empty()) throw ValidationError("per_class_metric: empty inputs");
    if (predicted.size() != labels.size())
        throw ValidationError("per_class_metric: " + std::to_string(predicted.size()) + " predictions for " +
                              std::to_string(labels.size()) + " labels");
    if (num_classes == 0) throw ValidationError("per_class_metric: zero classes");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (predicted[i] >= num_classes || labels[i] >= num_classes)
            throw ValidationError("per_class_metric: class index outside [0, " + std::to_string(num_classes) + ")");
    if (metric == PreferenceMetric::Mean) return std::vector<double>(num_classes, 1.0);

    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predicted[i] == labels[i]) {
            ++tp[labels[i]];
        } else {
            ++fp[predicted[i]];
            ++fn[labels[i]];
        }
    }
    std::vector<double> out(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double precision = ratio(tp[k], tp[k] + fp[k]);
        const double recall = ratio(tp[k], tp[k] + fn[k]);
        switch (metric) {
            case PreferenceMetric::Precision: out[k] = precision; break;
            case PreferenceMetric::Recall: out[k] = recall; break;
            default:
                out[k] = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        }
    }
    return out;
}

PreferenceWeights preference_weights(std::span<const double> alpha_vision, std::span<const double> alpha_multimodal,
                                     std::span<const double> alpha_text, double tau_p, PreferenceMetric metric) {
    const std::size_t c = alpha_vision.size();
    if (alpha_multimodal.size() != c || alpha_text.size() != c)
        throw DimensionError("preference_weights: score vectors differ in length");
    if (!(tau_p >= 0) || !std::isfinite(tau_p)) throw ValidationError("preference_weights: tau_p must be finite and >= 0");
    std::vector<double> alpha(c * 3), alpha_hat(c * 3);
    for (std::size_t k = 0; k < c; ++k) {
        const double row[3] = {alpha_vision[k], alpha_multimodal[k], alpha_text[k]};
        for (double s : row)
            if (!(s >= 0.0 && s <= 1.0))
                throw ValidationError("preference_weights: score " + std::to_string(s) + " outside [0, 1]");
        const double peak = std::max({row[0], row[1], row[2]});
        double total = 0;
        for (int j = 0; j < 3; ++j) {
            alpha[k * 3 + j] = row[j];
            alpha_hat[k * 3 + j] = std::exp(tau_p * (row[j] - peak));
            total += alpha_hat[k * 3 + j];
        }
        for (int j = 0; j < 3; ++j) alpha_hat[k * 3 + j] /= total;
    }
    return {Tensor<double>({c, 3}, std::move(alpha)), Tensor<double>({c, 3}, std::move(alpha_hat)), tau_p, metric};
}

Tensor<double> FusedPrediction::normalized() const {
    const std::size_t n = scores.rows(), c = scores.cols();
    std::vector<double> out(scores.data().begin(), scores.data().end());
    for (std::size_t i = 0; i < n; ++i) {
        double total = 0;
        for (std::size_t j = 0; j < c; ++j) total += out[i * c + j];
        if (total > 0)
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
    }
    return Tensor<double>(scores.dims(), std::move(out));
}

template <typename T>
FusedPrediction fuse_predict(const Tensor<T>& probs_vision, const Tensor<T>& probs_multimodal,
                             const Tensor<T>& probs_text, const PreferenceWeights& weights) {
    if (probs_vision.dims() != probs_multimodal.dims() || probs_vision.dims() != probs_text.dims())
        throw DimensionError("fuse_predict: probability matrices differ in shape");
    const std::size_t n = probs_vision.empty() ? 0 : probs_vision.rows(), c = probs_vision.cols();
    if (weights.num_classes() != c)
        throw DimensionError("fuse_predict: " + std::to_string(weights.num_classes()) + " preference rows for " +
                             std::to_string(c) + " classes");
    const auto w = weights.alpha_hat.data();
    std::vector<double> scores(n * c);
#pragma omp parallel for schedule(static) if (n * c > 4096)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        for (std::size_t k = 0; k < c; ++k) {
            const std::size_t at = i * c + k;
            scores[at] = w[k * 3 + 0] * static_cast<double>(probs_vision.data()[at]) +
                         w[k * 3 + 1] * static_cast<double>(probs_multimodal.data()[at]) +
                         w[k * 3 + 2] * static_cast<double>(probs_text.data()[at]);
        }
    }
    FusedPrediction out{Tensor<double>({n, c}, std::move(scores)), {}};
    out.labels = argmax_rows(out.scores);
    return out;
}

template <typename T>
FusedPrediction FusedClassifier<T>::predict(const Tensor<T>& features) const {
    const auto v = modref::predict(bank_, features, ClassifierKind::Vision);
    const auto vt = modref::predict(bank_, features, ClassifierKind::MultiModal);
    const auto t = modref::predict(bank_, features, ClassifierKind::Text);
    return fuse_predict(v.probs, vt.probs, t.probs, weights_);
}

template <typename T>
FusedClassifier<T> build_fused_classifier(const ClassifierBank<T>& bank, const Tensor<T>& exemplar_features,
                                          std::span<const std::size_t> exemplar_labels, double tau_p,
                                          PreferenceMetric metric) {
    for (auto kind : {ClassifierKind::Vision, ClassifierKind::MultiModal, ClassifierKind::Text})
        if (!bank.has(kind))
            throw ReferenceError("fusion needs the " + std::string(to_string(kind)) + " classifier");
    const std::size_t c = bank.num_classes();
    std::vector<std::size_t> per_class(c, 0);
    for (auto label : exemplar_labels) {
        if (label >= c) throw ValidationError("exemplar label outside the bank's classes");
        ++per_class[label];
    }
    for (std::size_t k = 0; k < c; ++k)
        if (per_class[k] == 0)
            throw ReferenceError("class " + (bank.class_ids.empty() ? std::to_string(k) : bank.class_ids[k]) +
                                 " has no exemplars; fusion unavailable (fall back to the text classifier)");
    auto score = [&](ClassifierKind kind) {
        return per_class_metric(predict(bank, exemplar_features, kind).labels, exemplar_labels, c, metric);
    };
    const auto alpha_v = score(ClassifierKind::Vision);
    const auto alpha_vt = score(ClassifierKind::MultiModal);
    const auto alpha_t = score(ClassifierKind::Text);
    return FusedClassifier<T>(bank, preference_weights(alpha_v, alpha_vt, alpha_t, tau_p, metric));
}

#define MODREF_INSTANTIATE_FUSION(T)                                                                      \
    template FusedPrediction fuse_predict(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                          const PreferenceWeights&);                                      \
    template class FusedClassifier<T>;                                                                    \
    template FusedClassifier<T> build_fused_classifier(const ClassifierBank<T>&, const Tensor<T>&,        \
                                                       std::span<const std::size_t>, double, PreferenceMetric);

MODREF_INSTANTIATE_FUSION(float)
MODREF_INSTANTIATE_FUSION(double)

}  // namespace modref
