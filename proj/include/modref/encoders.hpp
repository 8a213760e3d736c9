// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0
//
// Visual token generator (trainable) and the frozen language-encoder stand-in.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "modref/archive.hpp"
#include "modref/classifiers.hpp"
#include "modref/ops.hpp"
#include "modref/references.hpp"
#include "modref/rng.hpp"
#include "modref/tensor.hpp"

namespace modref {

inline constexpr std::size_t kGeneratorLayers = 4;

/// Pre-LN transformer block: attention + GELU MLP (hidden 4d), both residual.
template <typename T>
struct TransformerBlock {
    Tensor<T> ln1_gain, ln1_bias;
    Tensor<T> w_query, w_key, w_value, w_out, b_out;
    Tensor<T> ln2_gain, ln2_bias;
    Tensor<T> w_fc1, b_fc1, w_fc2, b_fc2;

    /// Weights ~ N(0, stddev); when `identity_value_path`, w_value and w_out
    /// get +I so the block starts as a near-identity token mixer.
    static TransformerBlock initialize(std::size_t dim, Rng& rng, double stddev,
                                       bool identity_value_path, bool trainable);

    std::vector<std::pair<std::string, Tensor<T>>> named(const std::string& prefix) const;
    static TransformerBlock from_archive(const dataio::TensorArchive& archive, const std::string& prefix,
                                         bool trainable);
};

struct BlockRegularization {
    double path_dropout = 0.0;     // whole attention branch
    double channel_dropout = 0.0;  // per-column mask on the MLP branch
};

/// One block forward. `rng == nullptr` is eval mode.
template <typename T>
Tensor<T> transformer_block(const TransformerBlock<T>& block, const Tensor<T>& x,
                            const AttentionOptions& attention_options, std::span<const T> key_bias,
                            const BlockRegularization& regularization, Rng* rng);

struct GeneratorConfig {
    std::size_t tokens = 2;  // P
    std::size_t dim = 64;
    std::size_t heads = 1;
    double path_dropout = 0.1;
    double channel_dropout = 0.1;
    double init_stddev = 0.02;
};

/// Learnable queries plus four blocks; the only trainable parameters.
template <typename T>
struct GeneratorParams {
    GeneratorConfig config;
    Tensor<T> queries;  // P x d
    std::vector<TransformerBlock<T>> blocks;

    static GeneratorParams initialize(const GeneratorConfig& config, std::uint64_t seed);

    std::size_t tokens() const { return queries.rows(); }
    std::size_t dim() const { return queries.cols(); }

    /// Handles onto every trainable tensor, in archive order.
    std::vector<Tensor<T>> parameters() const;
    /// Names follow "vok.queries", "vok.block<i>.<part>.<tensor>".
    std::vector<std::pair<std::string, Tensor<T>>> named() const;

    /// Deep copy with gradient tracking off (evaluation snapshot).
    GeneratorParams snapshot() const;

    void save(dataio::TensorArchive& archive) const;
    static GeneratorParams load(const dataio::TensorArchive& archive, bool trainable);
};

struct LanguageEncoderConfig {
    std::size_t dim = 64;
    std::size_t layers = 4;
    std::size_t context_length = 77;
    std::size_t heads = 1;
    std::uint64_t seed = 0;
};

/// Frozen: tensors never track gradients.
template <typename T>
struct LanguageEncoderParams {
    LanguageEncoderConfig config;
    std::vector<TransformerBlock<T>> blocks;
    Tensor<T> positions;  // context_length x d
    Tensor<T> ln_gain, ln_bias;
    Tensor<T> projection;  // d x d

    /// Seeded stand-in. Value/output/projection matrices are I + N(0, 0.02),
    /// everything else N(0, 0.02), layer-norm gains 1.
    static LanguageEncoderParams synthesize(const LanguageEncoderConfig& config);

    std::size_t dim() const { return projection.cols(); }
    std::size_t context_length() const { return positions.rows(); }

    std::vector<std::pair<std::string, Tensor<T>>> named() const;
    void save(dataio::TensorArchive& archive) const;
    /// Reads "lang.*" tensors; layer count inferred from the archive.
    static LanguageEncoderParams load(const dataio::TensorArchive& archive);
    static bool present_in(const dataio::TensorArchive& archive);
};

template <typename T>
struct Voken {
    Tensor<T> tokens;  // P x d
};

/// Runs [queries; exemplars] through the generator and returns the outputs at
/// the query positions. No positional encodings; exemplar keys carry a
/// -log(M) logit bias so the result depends on the exemplar set only through
/// its empirical distribution. `dropout_rng == nullptr` is eval mode.
template <typename T>
Voken<T> generate_visual_tokens(const GeneratorParams<T>& generator, const Tensor<T>& exemplar_features,
                                Rng* dropout_rng = nullptr);

/// Final-layer-norm hidden states (L x d) of the causal encoder.
template <typename T>
Tensor<T> encode_hidden(const LanguageEncoderParams<T>& encoder, const Tensor<T>& tokens);

/// Last-position hidden state, projected and L2-normalized: 1 x d.
template <typename T>
Tensor<T> encode_sequence(const LanguageEncoderParams<T>& encoder, const Tensor<T>& tokens);

struct BankRequest {
    bool text = true;
    bool vision = true;
    bool multimodal = true;
};

/// Builds w_T / w_V / w_VT rows for each class. When P + L_i exceeds the
/// context length, text tokens are cut from the tail; vokens are kept.
template <typename T>
ClassifierBank<T> build_classifier_weights(const GeneratorParams<T>* generator,
                                           const LanguageEncoderParams<T>& encoder,
                                           std::span<const ClassReferenceSet<T>> references,
                                           const BankRequest& request, T tau_t,
                                           Rng* dropout_rng = nullptr);

}  // namespace modref
