// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include "modref/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "modref/errors.hpp"

namespace modref {

GradCheckReport grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> params, double eps) {
    if (!(eps > 0)) throw ParameterError("grad_check: eps must be positive");
    for (auto& p : params) {
        if (!p.requires_grad() || !p.is_leaf()) throw ParameterError("grad_check: params must be leaves with gradients");
        p.zero_grad();
    }
    const auto out = f();
    if (!std::isfinite(out.item())) throw NumericError("grad_check: non-finite function value");
    out.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto data = params[pi].mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + eps;
            const double up = f().item();
            data[i] = saved - eps;
            const double down = f().item();
            data[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: non-finite value under perturbation");
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi][i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            ++report.entries_checked;
            if (report.entries_checked == 1 || rel > report.max_relative_error) {
                report.max_relative_error = rel;
                report.worst_param = pi;
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    for (auto& p : params) p.zero_grad();
    return report;
}

}  // namespace modref
