// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include "modref/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "modref/errors.hpp"
#include "modref/kernels.hpp"

namespace modref {

namespace {

using kernels::GemmShape;
using kernels::Transpose;

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
    for (const T v : values)
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
}

template <typename T>
void require_matrix(const Tensor<T>& x, const char* op) {
    if (x.ndim() != 2)
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(x.dims()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.dims() != b.dims())
        throw DimensionError(std::string(op) + ": shape " + shape_string(a.dims()) + " vs " +
                             shape_string(b.dims()));
}

template <typename T>
Tensor<T> finish(const char* op, Shape dims, std::vector<T> data, std::vector<Tensor<T>> parents,
                 std::function<void(detail::Node<T>&)> backward) {
    check_finite<T>(data, op);
    return make_result(std::move(dims), std::move(data), std::move(parents), std::move(backward));
}

template <typename T>
inline bool tracks(const detail::Node<T>& self, std::size_t i) {
    return self.parents[i]->requires_grad;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.dims()[0], k = a.dims()[1], n = b.dims()[1];
    if (b.dims()[0] != k)
        throw DimensionError("matmul: inner dims " + shape_string(a.dims()) + " x " +
                             shape_string(b.dims()));
    std::vector<T> out(m * n);
    kernels::gemm<T>({m, n, k}, a.data(), b.data(), out);
    return finish<T>("matmul", {m, n}, std::move(out), {a, b}, [m, n, k](detail::Node<T>& self) {
        const auto& pa = *self.parents[0];
        const auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            // dA = G * B^T
            GemmShape s{m, k, n, Transpose::No, Transpose::Yes, true};
            kernels::gemm<T>(s, self.grad, pb.data, self.parents[0]->grad);
        }
        if (pb.requires_grad) {
            // dB = A^T * G
            GemmShape s{k, n, m, Transpose::Yes, Transpose::No, true};
            kernels::gemm<T>(s, pa.data, self.grad, self.parents[1]->grad);
        }
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    require_matrix(x, "transpose");
    const std::size_t r = x.dims()[0], c = x.dims()[1];
    std::vector<T> out(r * c);
    const auto src = x.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
    return finish<T>("transpose", {c, r}, std::move(out), {x}, [r, c](detail::Node<T>& self) {
        auto& g = self.parents[0]->grad;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return finish<T>("add", a.dims(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        for (std::size_t p = 0; p < 2; ++p)
            if (tracks(self, p))
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    self.parents[p]->grad[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return finish<T>("sub", a.dims(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        if (tracks(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[0]->grad[i] += self.grad[i];
        if (tracks(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[1]->grad[i] -= self.grad[i];
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return finish<T>("mul", a.dims(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        const auto& da = self.parents[0]->data;
        const auto& db = self.parents[1]->data;
        if (tracks(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[0]->grad[i] += self.grad[i] * db[i];
        if (tracks(self, 1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[1]->grad[i] += self.grad[i] * da[i];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
    return finish<T>("scale", x.dims(), std::move(out), {x}, [factor](detail::Node<T>& self) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[0]->grad[i] += self.grad[i] * factor;
    });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& bias) {
    const std::size_t r = x.rows(), c = x.cols();
    if (bias.size() != c)
        throw DimensionError("add_row: bias " + shape_string(bias.dims()) + " vs rows of width " +
                             std::to_string(c));
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.data()[i * c + j] + bias.data()[j];
    return finish<T>("add_row", x.dims(), std::move(out), {x, bias}, [r, c](detail::Node<T>& self) {
        if (tracks(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) self.parents[0]->grad[i] += self.grad[i];
        if (tracks(self, 1))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) self.parents[1]->grad[j] += self.grad[i * c + j];
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = 0;
    for (const T v : x.data()) total += v;
    return finish<T>("sum", {1}, {total}, {x}, [](detail::Node<T>& self) {
        for (auto& g : self.parents[0]->grad) g += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.size() == 0) throw DimensionError("mean of an empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, T temperature, bool causal, std::span<const T> key_bias) {
    if (!(temperature > 0)) throw ParameterError("softmax: temperature must be positive");
    const std::size_t r = x.rows(), c = x.cols();
    if (!key_bias.empty() && key_bias.size() != c)
        throw DimensionError("softmax: key bias length " + std::to_string(key_bias.size()) +
                             " vs " + std::to_string(c) + " columns");
    if (c == 0 && r > 0) throw DimensionError("softmax over zero columns");
    std::vector<T> bias(key_bias.begin(), key_bias.end());
    std::vector<T> out(x.size());
    kernels::softmax_rows<T>(r, c, temperature, {causal, bias}, x.data(), out);
    return finish<T>("softmax", x.dims(), std::move(out), {x}, [r, c, temperature](detail::Node<T>& self) {
        const auto& y = self.data;
        auto& gx = self.parents[0]->grad;
        for (std::size_t i = 0; i < r; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * y[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                gx[i * c + j] += y[i * c + j] * (self.grad[i * c + j] - dot) / temperature;
        }
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, T temperature) {
    return masked_softmax(x, temperature, false, {});
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
    if (!(eps > 0)) throw ParameterError("layer_norm: eps must be positive");
    const std::size_t r = x.rows(), c = x.cols();
    if (gain.size() != c || bias.size() != c)
        throw DimensionError("layer_norm: affine params of length " + std::to_string(gain.size()) +
                             "/" + std::to_string(bias.size()) + " vs width " + std::to_string(c));
    std::vector<T> xhat(x.size()), inv_std(r), out(x.size());
    kernels::layer_norm_rows<T>(r, c, eps, x.data(), gain.data(), bias.data(), xhat, inv_std, out);
    return finish<T>(
        "layer_norm", x.dims(), std::move(out), {x, gain, bias},
        [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
            const auto& g = self.grad;
            const auto& gamma = self.parents[1]->data;
            if (tracks(self, 1))
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) self.parents[1]->grad[j] += g[i * c + j] * xhat[i * c + j];
            if (tracks(self, 2))
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) self.parents[2]->grad[j] += g[i * c + j];
            if (!tracks(self, 0)) return;
            auto& gx = self.parents[0]->grad;
            const T n = static_cast<T>(c);
            for (std::size_t i = 0; i < r; ++i) {
                T sum_d = 0, sum_dx = 0;
                for (std::size_t j = 0; j < c; ++j) {
                    const T d = g[i * c + j] * gamma[j];
                    sum_d += d;
                    sum_dx += d * xhat[i * c + j];
                }
                for (std::size_t j = 0; j < c; ++j) {
                    const T d = g[i * c + j] * gamma[j];
                    gx[i * c + j] += inv_std[i] / n * (n * d - sum_d - xhat[i * c + j] * sum_dx);
                }
            }
        });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    std::vector<T> out(x.size());
    const T rsqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x.data()[i];
        out[i] = T(0.5) * v * (T(1) + std::erf(v * rsqrt2));
    }
    return finish<T>("gelu", x.dims(), std::move(out), {x}, [rsqrt2](detail::Node<T>& self) {
        const auto& xs = self.parents[0]->data;
        const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * rsqrt2;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const T v = xs[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v * rsqrt2));
            const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
            self.parents[0]->grad[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, DropoutMode mode, Rng* rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout: probability must lie in [0, 1)");
    if (rng == nullptr || p == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<T> mask(x.size());
    switch (mode) {
        case DropoutMode::Element:
            for (auto& m : mask) m = rng->bernoulli(p) ? T(0) : keep_scale;
            break;
        case DropoutMode::Channel:
            for (std::size_t j = 0; j < c; ++j) {
                const T m = rng->bernoulli(p) ? T(0) : keep_scale;
                for (std::size_t i = 0; i < r; ++i) mask[i * c + j] = m;
            }
            break;
        case DropoutMode::Path:
            std::fill(mask.begin(), mask.end(), rng->bernoulli(p) ? T(0) : keep_scale);
            break;
    }
    return mul(x, Tensor<T>(x.dims(), std::move(mask)));
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.cols() != c)
            throw DimensionError("concat_rows: width " + std::to_string(p.cols()) + " vs " +
                                 std::to_string(c));
        total += p.rows();
    }
    std::vector<T> out;
    out.reserve(total * c);
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(out.size());
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return finish<T>("concat_rows", {total, c}, std::move(out), parts,
                     [offsets = std::move(offsets)](detail::Node<T>& self) {
                         for (std::size_t p = 0; p < self.parents.size(); ++p) {
                             if (!tracks(self, p)) continue;
                             auto& g = self.parents[p]->grad;
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[p] + i];
                         }
                     });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
    const std::size_t c = x.cols();
    if (begin + count > x.rows())
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") outside " + std::to_string(x.rows()) +
                             " rows");
    const auto src = x.data().subspan(begin * c, count * c);
    return finish<T>("slice_rows", {count, c}, std::vector<T>(src.begin(), src.end()), {x},
                     [off = begin * c](detail::Node<T>& self) {
                         auto& g = self.parents[0]->grad;
                         for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
                     });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t r = parts.front().rows();
    std::size_t total = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        if (p.rows() != r)
            throw DimensionError("concat_cols: row count " + std::to_string(p.rows()) + " vs " +
                                 std::to_string(r));
        offsets.push_back(total);
        total += p.cols();
    }
    std::vector<T> out(r * total);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const std::size_t w = parts[p].cols();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * total + offsets[p] + j] = parts[p].data()[i * w + j];
    }
    return finish<T>("concat_cols", {r, total}, std::move(out), parts,
                     [r, total, offsets = std::move(offsets)](detail::Node<T>& self) {
                         for (std::size_t p = 0; p < self.parents.size(); ++p) {
                             if (!tracks(self, p)) continue;
                             auto& g = self.parents[p]->grad;
                             const std::size_t w = g.size() / std::max<std::size_t>(r, 1);
                             for (std::size_t i = 0; i < r; ++i)
                                 for (std::size_t j = 0; j < w; ++j)
                                     g[i * w + j] += self.grad[i * total + offsets[p] + j];
                         }
                     });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
    const std::size_t r = x.rows(), c = x.cols();
    if (begin + count > c)
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") outside " + std::to_string(c) + " columns");
    std::vector<T> out(r * count);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.data()[i * c + begin + j];
    return finish<T>("slice_cols", {r, count}, std::move(out), {x},
                     [r, c, begin, count](detail::Node<T>& self) {
                         auto& g = self.parents[0]->grad;
                         for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < count; ++j)
                                 g[i * c + begin + j] += self.grad[i * count + j];
                     });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x) {
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<T> out(x.size()), norms(r);
    for (std::size_t i = 0; i < r; ++i) {
        T ss = 0;
        for (std::size_t j = 0; j < c; ++j) ss += x.data()[i * c + j] * x.data()[i * c + j];
        const T n = std::sqrt(ss);
        if (!(n > 0)) throw DegenerateInputError("l2_normalize: row " + std::to_string(i) + " has zero norm");
        norms[i] = n;
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x.data()[i * c + j] / n;
    }
    return finish<T>("l2_normalize", x.dims(), std::move(out), {x},
                     [r, c, norms = std::move(norms)](detail::Node<T>& self) {
                         const auto& y = self.data;
                         auto& gx = self.parents[0]->grad;
                         for (std::size_t i = 0; i < r; ++i) {
                             T dot = 0;
                             for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * y[i * c + j];
                             for (std::size_t j = 0; j < c; ++j)
                                 gx[i * c + j] += (self.grad[i * c + j] - y[i * c + j] * dot) / norms[i];
                         }
                     });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const std::size_t> labels) {
    constexpr T kClamp = T(1e-12);
    const std::size_t n = probs.rows(), c = probs.cols();
    if (labels.size() != n)
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(n) + " rows");
    if (n == 0) throw DimensionError("cross_entropy: no rows");
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= c)
            throw IndexError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                             std::to_string(c) + ")");
        total -= std::log(std::max(probs.data()[i * c + labels[i]], kClamp));
    }
    std::vector<std::size_t> owned(labels.begin(), labels.end());
    return finish<T>("cross_entropy", {1}, {total / static_cast<T>(n)}, {probs},
                     [n, c, owned = std::move(owned)](detail::Node<T>& self) {
                         const auto& p = self.parents[0]->data;
                         auto& gp = self.parents[0]->grad;
                         for (std::size_t i = 0; i < n; ++i) {
                             const T v = p[i * c + owned[i]];
                             if (v > kClamp) gp[i * c + owned[i]] -= self.grad[0] / (static_cast<T>(n) * v);
                         }
                     });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& queries, const Tensor<T>& keys, const Tensor<T>& values,
                    const AttentionOptions& options, std::span<const T> key_bias) {
    require_matrix(queries, "attention");
    require_matrix(keys, "attention");
    require_matrix(values, "attention");
    const std::size_t d = queries.cols();
    if (keys.cols() != d) throw DimensionError("attention: query/key widths differ");
    if (keys.rows() != values.rows()) throw DimensionError("attention: key/value lengths differ");
    if (options.causal && queries.rows() != keys.rows())
        throw DimensionError("attention: causal masking needs equal query and key lengths");
    if (options.heads == 0 || d % options.heads != 0 || values.cols() % options.heads != 0)
        throw ConfigError("attention: " + std::to_string(options.heads) + " heads do not divide width " +
                          std::to_string(d));
    const std::size_t dh = d / options.heads;
    const std::size_t dv = values.cols() / options.heads;
    const T temperature = std::sqrt(static_cast<T>(dh));

    auto head = [&](const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
        auto scores = matmul(q, transpose(k));
        return matmul(masked_softmax(scores, temperature, options.causal, key_bias), v);
    };
    if (options.heads == 1) return head(queries, keys, values);
    std::vector<Tensor<T>> outs;
    outs.reserve(options.heads);
    for (std::size_t h = 0; h < options.heads; ++h)
        outs.push_back(head(slice_cols(queries, h * dh, dh), slice_cols(keys, h * dh, dh),
                            slice_cols(values, h * dv, dv)));
    return concat_cols(outs);
}

#define MODREF_INSTANTIATE_OPS(T)                                                                  \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> transpose(const Tensor<T>&);                                                \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> scale(const Tensor<T>&, T);                                                 \
    template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> sum(const Tensor<T>&);                                                      \
    template Tensor<T> mean(const Tensor<T>&);                                                     \
    template Tensor<T> softmax(const Tensor<T>&, T);                                               \
    template Tensor<T> masked_softmax(const Tensor<T>&, T, bool, std::span<const T>);              \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
    template Tensor<T> gelu(const Tensor<T>&);                                                     \
    template Tensor<T> dropout(const Tensor<T>&, double, DropoutMode, Rng*);                       \
    template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                 \
    template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                     \
    template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                 \
    template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                     \
    template Tensor<T> l2_normalize(const Tensor<T>&);                                             \
    template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::size_t>);              \
    template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                 const AttentionOptions&, std::span<const T>);

MODREF_INSTANTIATE_OPS(float)
MODREF_INSTANTIATE_OPS(double)

}  // namespace modref
