// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0
//
// Randomized finite-difference cases for every differentiable primitive.
// Each case reduces the op output to a scalar through a fixed random
// projection, so no gradient is identically zero by symmetry (the sum of a
// softmax row, for example, has zero gradient).

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "modref/encoders.hpp"
#include "modref/gradcheck.hpp"
#include "modref/ops.hpp"
#include "modref/training.hpp"
#include "support.hpp"

namespace modref::testing {

using TD = Tensor<double>;

inline TD project(const TD& y, Rng& rng) {
    auto r = random_tensor<double>(y.dims(), rng);
    return sum(mul(y, r));
}

struct OpGradResult {
    std::string op;
    int cases = 0;
    double worst = 0;
};

/// Runs `cases_per_op` random shapes for each primitive; returns the worst
/// relative error per op.
inline std::vector<OpGradResult> run_primitive_grad_cases(std::uint64_t seed, int cases_per_op,
                                                          double fd_step = 1e-4) {
    Rng rng(seed);
    auto dim = [&](std::size_t lo, std::size_t hi) { return static_cast<std::size_t>(rng.uniform_int(lo, hi)); };
    auto leaf = [&](Shape s, double scale = 1.0) { return random_tensor<double>(std::move(s), rng, scale, true); };

    using Builder = std::function<std::pair<std::function<TD()>, std::vector<TD>>()>;
    std::vector<std::pair<std::string, Builder>> ops;
    auto unary = [&](std::string name, std::function<TD(const TD&)> op, double scale = 1.0) {
        ops.emplace_back(name, [&, op, scale] {
            auto x = leaf({dim(1, 5), dim(1, 6)}, scale);
            auto r = random_tensor<double>(op(x).dims(), rng);
            return std::pair{std::function<TD()>([=] { return sum(mul(op(x), r)); }), std::vector<TD>{x}};
        });
    };

    ops.emplace_back("matmul", [&] {
        const auto m = dim(1, 5), k = dim(1, 5), n = dim(1, 5);
        auto a = leaf({m, k}), b = leaf({k, n});
        auto r = random_tensor<double>({m, n}, rng);
        return std::pair{std::function<TD()>([=] { return sum(mul(matmul(a, b), r)); }), std::vector<TD>{a, b}};
    });
    unary("transpose", [](const TD& x) { return transpose(x); });
    for (const char* name : {"add", "sub", "mul"}) {
        ops.emplace_back(name, [&, name = std::string(name)] {
            const Shape s{dim(1, 5), dim(1, 6)};
            auto a = leaf(s), b = leaf(s);
            auto r = random_tensor<double>(s, rng);
            auto f = [=] {
                const TD y = name == "add" ? add(a, b) : name == "sub" ? sub(a, b) : mul(a, b);
                return sum(mul(y, r));
            };
            return std::pair{std::function<TD()>(f), std::vector<TD>{a, b}};
        });
    }
    unary("scale", [](const TD& x) { return scale(x, -1.7); });
    ops.emplace_back("add_row", [&] {
        const auto n = dim(1, 5), d = dim(1, 6);
        auto x = leaf({n, d}), b = leaf({d});
        auto r = random_tensor<double>({n, d}, rng);
        return std::pair{std::function<TD()>([=] { return sum(mul(add_row(x, b), r)); }), std::vector<TD>{x, b}};
    });
    ops.emplace_back("sum", [&] {
        auto x = leaf({dim(1, 5), dim(1, 6)});
        auto w = random_tensor<double>(x.dims(), rng);
        return std::pair{std::function<TD()>([=] { return scale(sum(mul(x, w)), 0.5); }), std::vector<TD>{x}};
    });
    ops.emplace_back("mean", [&] {
        auto x = leaf({dim(1, 5), dim(1, 6)});
        auto w = random_tensor<double>(x.dims(), rng);
        return std::pair{std::function<TD()>([=] { return mean(mul(x, w)); }), std::vector<TD>{x}};
    });
    ops.emplace_back("softmax", [&] {
        auto x = leaf({dim(1, 5), dim(2, 6)});
        const double tau = 0.2 + rng.uniform() * 2.0;
        auto r = random_tensor<double>(x.dims(), rng);
        return std::pair{std::function<TD()>([=] { return sum(mul(softmax(x, tau), r)); }), std::vector<TD>{x}};
    });
    ops.emplace_back("masked_softmax", [&] {
        const auto n = dim(1, 5);
        auto x = leaf({n, n});
        auto r = random_tensor<double>(x.dims(), rng);
        std::vector<double> bias(n);
        for (auto& b : bias) b = -rng.uniform() * 2.0;
        auto f = [=] { return sum(mul(masked_softmax(x, 0.7, true, std::span<const double>(bias)), r)); };
        return std::pair{std::function<TD()>(f), std::vector<TD>{x}};
    });
    ops.emplace_back("layer_norm", [&] {
        const auto n = dim(1, 4), d = dim(3, 8);  // d = 2 pins rows to +-1: gradient is pure eps noise
        auto x = leaf({n, d}), g = leaf({d}), b = leaf({d});
        auto r = random_tensor<double>({n, d}, rng);
        return std::pair{std::function<TD()>([=] { return sum(mul(layer_norm(x, g, b), r)); }),
                         std::vector<TD>{x, g, b}};
    });
    unary("gelu", [](const TD& x) { return gelu(x); }, 1.5);
    for (auto mode : {DropoutMode::Element, DropoutMode::Channel, DropoutMode::Path}) {
        const std::string name = mode == DropoutMode::Element   ? "dropout_element"
                                 : mode == DropoutMode::Channel ? "dropout_channel"
                                                                : "dropout_path";
        ops.emplace_back(name, [&, mode] {
            auto x = leaf({dim(1, 5), dim(1, 6)});
            auto r = random_tensor<double>(x.dims(), rng);
            const std::uint64_t mask_seed = rng.next_u64();
            auto f = [=] {
                Rng masks(mask_seed);  // same mask on every evaluation
                return sum(mul(dropout(x, 0.3, mode, &masks), r));
            };
            return std::pair{std::function<TD()>(f), std::vector<TD>{x}};
        });
    }
    ops.emplace_back("concat_rows", [&] {
        const auto d = dim(1, 5);
        auto a = leaf({dim(1, 4), d}), b = leaf({dim(1, 4), d});
        auto r = random_tensor<double>({a.rows() + b.rows(), d}, rng);
        return std::pair{std::function<TD()>([=] { return sum(mul(concat_rows<double>({a, b}), r)); }),
                         std::vector<TD>{a, b}};
    });
    ops.emplace_back("concat_cols", [&] {
        const auto n = dim(1, 4);
        auto a = leaf({n, dim(1, 4)}), b = leaf({n, dim(1, 4)});
        auto r = random_tensor<double>({n, a.cols() + b.cols()}, rng);
        return std::pair{std::function<TD()>([=] { return sum(mul(concat_cols<double>({a, b}), r)); }),
                         std::vector<TD>{a, b}};
    });
    ops.emplace_back("slice_rows", [&] {
        auto x = leaf({dim(2, 6), dim(1, 5)});
        const auto begin = dim(0, x.rows() - 1);
        const auto count = dim(1, x.rows() - begin);
        auto r = random_tensor<double>({count, x.cols()}, rng);
        return std::pair{std::function<TD()>([=] { return sum(mul(slice_rows(x, begin, count), r)); }),
                         std::vector<TD>{x}};
    });
    ops.emplace_back("slice_cols", [&] {
        auto x = leaf({dim(1, 5), dim(2, 6)});
        const auto begin = dim(0, x.cols() - 1);
        const auto count = dim(1, x.cols() - begin);
        auto r = random_tensor<double>({x.rows(), count}, rng);
        return std::pair{std::function<TD()>([=] { return sum(mul(slice_cols(x, begin, count), r)); }),
                         std::vector<TD>{x}};
    });
    unary("l2_normalize", [](const TD& x) { return l2_normalize(x); });
    ops.emplace_back("cross_entropy", [&] {
        const auto n = dim(1, 5), c = dim(2, 6);
        auto x = leaf({n, c});
        std::vector<std::size_t> labels(n);
        for (auto& l : labels) l = dim(0, c - 1);
        return std::pair{std::function<TD()>([=] { return cross_entropy(softmax(x, 1.0), labels); }),
                         std::vector<TD>{x}};
    });
    ops.emplace_back("attention", [&] {
        const std::size_t heads = dim(1, 2);
        const auto l = dim(1, 5), d = heads * dim(1, 4);
        const bool causal = rng.bernoulli(0.5);
        auto q = leaf({l, d}), k = leaf({l, d}), v = leaf({l, d});
        auto r = random_tensor<double>({l, d}, rng);
        auto f = [=] { return sum(mul(attention(q, k, v, AttentionOptions{heads, causal}), r)); };
        return std::pair{std::function<TD()>(f), std::vector<TD>{q, k, v}};
    });

    std::vector<OpGradResult> results;
    for (auto& [name, build] : ops) {
        OpGradResult res{name, 0, 0.0};
        for (int i = 0; i < cases_per_op; ++i) {
            auto [f, params] = build();
            res.worst = std::max(res.worst, grad_check(f, params, fd_step).max_relative_error);
            ++res.cases;
        }
        results.push_back(res);
    }
    return results;
}

/// A small double-precision episode over synthetic unit-norm classes.
struct EpisodeFixture {
    GeneratorParams<double> generator;
    LanguageEncoderParams<double> encoder;
    Episode<double> episode;
};

inline EpisodeFixture make_episode_fixture(std::size_t d, std::size_t classes, std::size_t shots, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ClassReferenceSet<double>> refs;
    for (std::size_t k = 0; k < classes; ++k) {
        ClassReferenceSet<double> ref;
        ref.id = "k" + std::to_string(k);
        ref.label = k;
        ref.exemplars = unit_rows<double>(shots, d, rng);
        ref.text_tokens = random_tensor<double>({3, d}, rng, 0.5);
        refs.push_back(std::move(ref));
    }
    EpisodeFixture fx{GeneratorParams<double>::initialize(GeneratorConfig{2, d, 1, 0.1, 0.1, 0.02}, seed),
                      LanguageEncoderParams<double>::synthesize(LanguageEncoderConfig{d, 2, 16, 1, seed + 1}),
                      {}};
    fx.episode = sample_episode<double>(refs, EpisodeSpec{shots, classes, false}, rng);
    return fx;
}

/// Full episode-loss gradient check over every generator parameter, with a
/// fixed dropout mask so the loss is a deterministic function. At tau_t = 0.01
/// logits are scaled by 100 and a 1e-4 central difference carries ~1e-3
/// truncation error of its own, hence the smaller step.
inline GradCheckReport episode_loss_grad_check(std::size_t d, double tau_t, std::uint64_t seed,
                                               double fd_step = 1e-5) {
    auto fx = make_episode_fixture(d, 3, 4, seed);
    const std::uint64_t mask_seed = seed * 31 + 5;
    auto f = [&] {
        Rng masks(mask_seed);
        return episode_loss<double>(fx.generator, fx.encoder, fx.episode, tau_t, &masks);
    };
    return grad_check(f, fx.generator.parameters(), fd_step);
}

}  // namespace modref::testing
