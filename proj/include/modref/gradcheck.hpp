// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "modref/tensor.hpp"

namespace modref {

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients of the scalar `f` with central differences
/// f(x + eps) - f(x - eps) / 2eps for every entry of every tensor in `params`.
/// Relative error uses max(|a|, |b|, 1e-8) as denominator. `f` must rebuild
/// its graph from the params on every call and be deterministic (reseed any
/// dropout inside it). Non-finite values throw NumericError. The params'
/// gradients are zeroed before and after.
GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params,
                           double eps = 1e-4);

}  // namespace modref
