// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers and independent reference implementations ("oracles") used
// by the unit and acceptance tests. Nothing here calls into the code under
// test except to build inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "modref/rng.hpp"
#include "modref/tensor.hpp"

namespace modref::testing {

template <typename T>
Tensor<T> random_tensor(Shape dims, Rng& rng, double scale = 1.0, bool requires_grad = false) {
    std::vector<T> v(shape_size(dims));
    for (auto& x : v) x = static_cast<T>(rng.normal(0.0, scale));
    return Tensor<T>(std::move(dims), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
    std::vector<T> v(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        double norm = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double x = rng.normal();
            v[r * cols + c] = static_cast<T>(x);
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] = static_cast<T>(v[r * cols + c] / norm);
    }
    return Tensor<T>({rows, cols}, std::move(v));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return worst;
}

template <typename T>
Tensor<T> rows_of(const Tensor<T>& x, const std::vector<std::size_t>& order) {
    const std::size_t d = x.cols();
    std::vector<T> out;
    out.reserve(order.size() * d);
    for (auto r : order) out.insert(out.end(), x.data().begin() + r * d, x.data().begin() + (r + 1) * d);
    return Tensor<T>({order.size(), d}, std::move(out));
}

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("modref_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// ---------------------------------------------------------------- oracles

struct ConfusionScores {
    std::vector<double> precision, recall, f1;
};

/// Builds the full C x C confusion matrix and reads one-vs-rest counts off it.
inline ConfusionScores confusion_oracle(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth,
                                        std::size_t classes) {
    std::vector<std::vector<long>> m(classes, std::vector<long>(classes, 0));
    for (std::size_t i = 0; i < pred.size(); ++i) ++m[truth[i]][pred[i]];
    ConfusionScores s;
    for (std::size_t k = 0; k < classes; ++k) {
        long tp = m[k][k], fp = 0, fn = 0;
        for (std::size_t j = 0; j < classes; ++j) {
            if (j == k) continue;
            fp += m[j][k];
            fn += m[k][j];
        }
        const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
        s.precision.push_back(p);
        s.recall.push_back(r);
        s.f1.push_back(p + r == 0 ? 0.0 : 2 * p * r / (p + r));
    }
    return s;
}

/// Textbook Adam on doubles, one parameter vector, no weight decay.
struct ReferenceAdam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<double> m, v;
    int t = 0;

    void step(std::vector<double>& theta, const std::vector<double>& g, double lr) {
        if (m.empty()) m.assign(theta.size(), 0.0), v.assign(theta.size(), 0.0);
        ++t;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = beta1 * m[i] + (1 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(beta1, t));
            const double vh = v[i] / (1 - std::pow(beta2, t));
            theta[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
};

/// Nearest-prototype (max cosine) accuracy over labelled unit rows.
template <typename T>
double nearest_prototype_accuracy(const std::vector<Tensor<T>>& prototypes_per_class,
                                  const std::vector<Tensor<T>>& samples_per_class) {
    std::size_t hits = 0, total = 0;
    for (std::size_t k = 0; k < samples_per_class.size(); ++k) {
        const auto& s = samples_per_class[k];
        const std::size_t d = s.cols();
        for (std::size_t r = 0; r < s.rows(); ++r) {
            std::size_t best = 0;
            double best_score = -1e300;
            for (std::size_t c = 0; c < prototypes_per_class.size(); ++c) {
                double dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += double(s.at(r, j)) * double(prototypes_per_class[c].data()[j]);
                if (dot > best_score) best_score = dot, best = c;
            }
            hits += best == k;
            ++total;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(total);
}

/// Upper-tail chi-square critical value for 4 degrees of freedom at alpha = 0.001.
inline constexpr double kChiSquare4dof_0001 = 18.4668;

}  // namespace modref::testing
