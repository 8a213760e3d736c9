// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include "modref/classifiers.hpp"

#include "modref/errors.hpp"
#include "modref/ops.hpp"

namespace modref {

std::string_view to_string(ClassifierKind kind) {
    switch (kind) {
        case ClassifierKind::Text: return "T";
        case ClassifierKind::Vision: return "V";
        case ClassifierKind::MultiModal: return "VT";
    }
    return "?";
}

namespace {

template <typename T>
const std::optional<Tensor<T>>& slot(const ClassifierBank<T>& bank, ClassifierKind kind) {
    switch (kind) {
        case ClassifierKind::Text: return bank.text;
        case ClassifierKind::Vision: return bank.vision;
        case ClassifierKind::MultiModal: return bank.multimodal;
    }
    throw ParameterError("unknown classifier kind");
}

constexpr std::array<std::pair<ClassifierKind, const char*>, 3> kBankNames{{
    {ClassifierKind::Text, "bank.w_T"},
    {ClassifierKind::Vision, "bank.w_V"},
    {ClassifierKind::MultiModal, "bank.w_VT"},
}};

}  // namespace

template <typename T>
bool ClassifierBank<T>::has(ClassifierKind kind) const {
    return slot(*this, kind).has_value();
}

template <typename T>
const Tensor<T>& ClassifierBank<T>::weights(ClassifierKind kind) const {
    const auto& w = slot(*this, kind);
    if (!w) throw ReferenceError("classifier bank has no " + std::string(to_string(kind)) + " weights");
    return *w;
}

template <typename T>
std::size_t ClassifierBank<T>::num_classes() const {
    for (auto [kind, name] : kBankNames)
        if (has(kind)) return weights(kind).rows();
    return 0;
}

template <typename T>
std::size_t ClassifierBank<T>::dim() const {
    for (auto [kind, name] : kBankNames)
        if (has(kind)) return weights(kind).cols();
    return 0;
}

template <typename T>
void ClassifierBank<T>::validate() const {
    if (!has(ClassifierKind::Text) && !has(ClassifierKind::Vision) && !has(ClassifierKind::MultiModal))
        throw ReferenceError("classifier bank holds no weight matrix");
    if (!(tau_t > 0)) throw ParameterError("classifier temperature must be positive");
    const std::size_t c = num_classes(), d = dim();
    for (auto [kind, name] : kBankNames) {
        if (!has(kind)) continue;
        const auto& w = weights(kind);
        if (w.ndim() != 2 || w.rows() != c || w.cols() != d)
            throw DimensionError(std::string(name) + " has shape " + shape_string(w.dims()) + ", expected " +
                                 std::to_string(c) + "x" + std::to_string(d));
    }
    if (!class_ids.empty() && class_ids.size() != c)
        throw DimensionError("classifier bank has " + std::to_string(class_ids.size()) + " ids for " +
                             std::to_string(c) + " classes");
}

template <typename T>
void ClassifierBank<T>::save(dataio::TensorArchive& archive) const {
    validate();
    for (auto [kind, name] : kBankNames)
        if (has(kind)) archive.add(name, weights(kind));
    archive.add("bank.tau_t", Shape{1}, {static_cast<float>(tau_t)});
    std::string ids;
    for (std::size_t i = 0; i < class_ids.size(); ++i) ids += (i ? "\n" : "") + class_ids[i];
    archive.set_metadata("bank.class_ids", ids);
}

template <typename T>
ClassifierBank<T> ClassifierBank<T>::load(const dataio::TensorArchive& archive) {
    ClassifierBank bank;
    for (auto [kind, name] : kBankNames) {
        if (!archive.contains(name)) continue;
        auto w = archive.tensor<T>(name);
        switch (kind) {
            case ClassifierKind::Text: bank.text = w; break;
            case ClassifierKind::Vision: bank.vision = w; break;
            case ClassifierKind::MultiModal: bank.multimodal = w; break;
        }
    }
    bank.tau_t = static_cast<T>(archive.get("bank.tau_t").values.at(0));
    if (auto ids = archive.metadata("bank.class_ids"); ids && !ids->empty()) {
        std::size_t start = 0;
        while (true) {
            const auto end = ids->find('\n', start);
            bank.class_ids.push_back(ids->substr(start, end - start));
            if (end == std::string::npos) break;
            start = end + 1;
        }
    }
    bank.validate();
    return bank;
}

template <typename T>
Tensor<T> classify(const Tensor<T>& weights, const Tensor<T>& features, T tau_t) {
    if (weights.empty() || weights.rows() == 0) throw ReferenceError("classify: empty classifier bank");
    if (features.cols() != weights.cols())
        throw DimensionError("classify: feature width " + std::to_string(features.cols()) + " vs weight width " +
                             std::to_string(weights.cols()));
    if (features.rows() == 0) return Tensor<T>::zeros({0, weights.rows()});
    const auto logits = matmul(l2_normalize(features), transpose(weights));
    return softmax(logits, tau_t);
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& scores) {
    const std::size_t r = scores.empty() ? 0 : scores.rows(), c = scores.cols();
    std::vector<std::size_t> out(r, 0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 1; j < c; ++j)
            if (scores.data()[i * c + j] > scores.data()[i * c + out[i]]) out[i] = j;
    return out;
}

template <typename T>
Prediction<T> predict(const ClassifierBank<T>& bank, const Tensor<T>& features, ClassifierKind kind) {
    auto probs = classify(bank.weights(kind), features, bank.tau_t);
    auto labels = argmax_rows(probs);
    return {std::move(probs), std::move(labels)};
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
    if (predicted.size() != truth.size()) throw DimensionError("accuracy: length mismatch");
    if (truth.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

#define MODREF_INSTANTIATE_CLASSIFIERS(T)                                                \
    template struct ClassifierBank<T>;                                                   \
    template Tensor<T> classify(const Tensor<T>&, const Tensor<T>&, T);                  \
    template std::vector<std::size_t> argmax_rows(const Tensor<T>&);                     \
    template Prediction<T> predict(const ClassifierBank<T>&, const Tensor<T>&, ClassifierKind);

MODREF_INSTANTIATE_CLASSIFIERS(float)
MODREF_INSTANTIATE_CLASSIFIERS(double)

}  // namespace modref
