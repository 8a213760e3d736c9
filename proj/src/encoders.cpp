// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include "modref/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "modref/errors.hpp"

namespace modref {

namespace {

template <typename T>
Tensor<T> random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev, bool add_identity,
                        bool trainable) {
    std::vector<T> v(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            v[i * cols + j] = static_cast<T>(rng.normal(0.0, stddev) + (add_identity && i == j ? 1.0 : 0.0));
    return Tensor<T>({rows, cols}, std::move(v), trainable);
}

template <typename T>
Tensor<T> constant_vector(std::size_t n, T value, bool trainable) {
    return Tensor<T>::full({n}, value, trainable);
}

template <typename T>
Tensor<T> load_tensor(const dataio::TensorArchive& archive, const std::string& name, bool trainable) {
    return archive.tensor<T>(name, trainable);
}

}  // namespace

template <typename T>
TransformerBlock<T> TransformerBlock<T>::initialize(std::size_t dim, Rng& rng, double stddev,
                                                    bool identity_value_path, bool trainable) {
    TransformerBlock b;
    b.ln1_gain = constant_vector<T>(dim, T(1), trainable);
    b.ln1_bias = constant_vector<T>(dim, T(0), trainable);
    b.w_query = random_matrix<T>(dim, dim, rng, stddev, false, trainable);
    b.w_key = random_matrix<T>(dim, dim, rng, stddev, false, trainable);
    b.w_value = random_matrix<T>(dim, dim, rng, stddev, identity_value_path, trainable);
    b.w_out = random_matrix<T>(dim, dim, rng, stddev, identity_value_path, trainable);
    b.b_out = constant_vector<T>(dim, T(0), trainable);
    b.ln2_gain = constant_vector<T>(dim, T(1), trainable);
    b.ln2_bias = constant_vector<T>(dim, T(0), trainable);
    b.w_fc1 = random_matrix<T>(dim, 4 * dim, rng, stddev, false, trainable);
    b.b_fc1 = constant_vector<T>(4 * dim, T(0), trainable);
    b.w_fc2 = random_matrix<T>(4 * dim, dim, rng, stddev, false, trainable);
    b.b_fc2 = constant_vector<T>(dim, T(0), trainable);
    return b;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> TransformerBlock<T>::named(const std::string& prefix) const {
    return {
        {prefix + ".ln1.gain", ln1_gain},  {prefix + ".ln1.bias", ln1_bias},
        {prefix + ".attn.wq", w_query},    {prefix + ".attn.wk", w_key},
        {prefix + ".attn.wv", w_value},    {prefix + ".attn.wo", w_out},
        {prefix + ".attn.bo", b_out},      {prefix + ".ln2.gain", ln2_gain},
        {prefix + ".ln2.bias", ln2_bias},  {prefix + ".mlp.fc1", w_fc1},
        {prefix + ".mlp.fc1_bias", b_fc1}, {prefix + ".mlp.fc2", w_fc2},
        {prefix + ".mlp.fc2_bias", b_fc2},
    };
}

template <typename T>
TransformerBlock<T> TransformerBlock<T>::from_archive(const dataio::TensorArchive& archive,
                                                      const std::string& prefix, bool trainable) {
    TransformerBlock b;
    auto get = [&](const char* part) { return load_tensor<T>(archive, prefix + part, trainable); };
    b.ln1_gain = get(".ln1.gain");
    b.ln1_bias = get(".ln1.bias");
    b.w_query = get(".attn.wq");
    b.w_key = get(".attn.wk");
    b.w_value = get(".attn.wv");
    b.w_out = get(".attn.wo");
    b.b_out = get(".attn.bo");
    b.ln2_gain = get(".ln2.gain");
    b.ln2_bias = get(".ln2.bias");
    b.w_fc1 = get(".mlp.fc1");
    b.b_fc1 = get(".mlp.fc1_bias");
    b.w_fc2 = get(".mlp.fc2");
    b.b_fc2 = get(".mlp.fc2_bias");
    const std::size_t d = b.w_query.rows();
    if (b.w_query.cols() != d || b.w_key.dims() != b.w_query.dims() || b.w_value.dims() != b.w_query.dims() ||
        b.w_out.dims() != b.w_query.dims() || b.w_fc1.dims() != Shape{d, 4 * d} ||
        b.w_fc2.dims() != Shape{4 * d, d} || b.ln1_gain.size() != d || b.b_fc1.size() != 4 * d)
        throw DimensionError("block '" + prefix + "' has inconsistent tensor shapes");
    return b;
}

template <typename T>
Tensor<T> transformer_block(const TransformerBlock<T>& block, const Tensor<T>& x,
                            const AttentionOptions& attention_options, std::span<const T> key_bias,
                            const BlockRegularization& regularization, Rng* rng) {
    const auto h = layer_norm(x, block.ln1_gain, block.ln1_bias);
    auto attended = attention(matmul(h, block.w_query), matmul(h, block.w_key), matmul(h, block.w_value),
                              attention_options, key_bias);
    attended = add_row(matmul(attended, block.w_out), block.b_out);
    attended = dropout(attended, regularization.path_dropout, DropoutMode::Path, rng);
    const auto mid = add(x, attended);

    const auto h2 = layer_norm(mid, block.ln2_gain, block.ln2_bias);
    auto mlp = gelu(add_row(matmul(h2, block.w_fc1), block.b_fc1));
    mlp = add_row(matmul(mlp, block.w_fc2), block.b_fc2);
    mlp = dropout(mlp, regularization.channel_dropout, DropoutMode::Channel, rng);
    return add(mid, mlp);
}

// ---------------------------------------------------------------- generator

template <typename T>
GeneratorParams<T> GeneratorParams<T>::initialize(const GeneratorConfig& config, std::uint64_t seed) {
    if (config.tokens == 0) throw ConfigError("generator needs at least one query token");
    if (config.dim == 0) throw ConfigError("generator width must be positive");
    if (config.heads == 0 || config.dim % config.heads != 0)
        throw ConfigError("generator heads must divide the width");
    Rng rng(seed);
    GeneratorParams g;
    g.config = config;
    g.queries = random_matrix<T>(config.tokens, config.dim, rng, 0.02, false, true);
    for (std::size_t i = 0; i < kGeneratorLayers; ++i)
        g.blocks.push_back(TransformerBlock<T>::initialize(config.dim, rng, config.init_stddev, false, true));
    return g;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> GeneratorParams<T>::named() const {
    std::vector<std::pair<std::string, Tensor<T>>> out{{"vok.queries", queries}};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        auto part = blocks[i].named("vok.block" + std::to_string(i));
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> GeneratorParams<T>::parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
}

template <typename T>
GeneratorParams<T> GeneratorParams<T>::snapshot() const {
    GeneratorParams copy;
    copy.config = config;
    copy.queries = queries.clone(false);
    for (const auto& b : blocks) {
        TransformerBlock<T> c = b;
        for (auto* t : {&c.ln1_gain, &c.ln1_bias, &c.w_query, &c.w_key, &c.w_value, &c.w_out, &c.b_out,
                        &c.ln2_gain, &c.ln2_bias, &c.w_fc1, &c.b_fc1, &c.w_fc2, &c.b_fc2})
            *t = t->clone(false);
        copy.blocks.push_back(std::move(c));
    }
    return copy;
}

template <typename T>
void GeneratorParams<T>::save(dataio::TensorArchive& archive) const {
    for (const auto& [name, t] : named()) archive.add(name, t);
    archive.set_metadata("vok.heads", std::to_string(config.heads));
    archive.set_metadata("vok.path_dropout", std::to_string(config.path_dropout));
    archive.set_metadata("vok.channel_dropout", std::to_string(config.channel_dropout));
}

template <typename T>
GeneratorParams<T> GeneratorParams<T>::load(const dataio::TensorArchive& archive, bool trainable) {
    GeneratorParams g;
    g.queries = load_tensor<T>(archive, "vok.queries", trainable);
    if (g.queries.ndim() != 2 || g.queries.rows() == 0)
        throw DimensionError("vok.queries must be a non-empty P x d matrix");
    for (std::size_t i = 0; i < kGeneratorLayers; ++i)
        g.blocks.push_back(TransformerBlock<T>::from_archive(archive, "vok.block" + std::to_string(i), trainable));
    if (archive.contains("vok.block" + std::to_string(kGeneratorLayers) + ".attn.wq"))
        throw ValidationError("generator archive has more than four blocks");
    for (const auto& b : g.blocks)
        if (b.w_query.rows() != g.queries.cols()) throw DimensionError("generator block width differs from queries");
    g.config.tokens = g.queries.rows();
    g.config.dim = g.queries.cols();
    if (auto h = archive.metadata("vok.heads")) g.config.heads = std::stoul(*h);
    if (auto p = archive.metadata("vok.path_dropout")) g.config.path_dropout = std::stod(*p);
    if (auto p = archive.metadata("vok.channel_dropout")) g.config.channel_dropout = std::stod(*p);
    return g;
}

// ----------------------------------------------------------- language encoder

template <typename T>
LanguageEncoderParams<T> LanguageEncoderParams<T>::synthesize(const LanguageEncoderConfig& config) {
    if (config.dim == 0 || config.layers == 0 || config.context_length == 0)
        throw ConfigError("language encoder needs positive width, depth and context length");
    if (config.heads == 0 || config.dim % config.heads != 0)
        throw ConfigError("language encoder heads must divide the width");
    constexpr double kStd = 0.02;
    Rng rng(config.seed);
    LanguageEncoderParams enc;
    enc.config = config;
    for (std::size_t i = 0; i < config.layers; ++i)
        enc.blocks.push_back(TransformerBlock<T>::initialize(config.dim, rng, kStd, true, false));
    enc.positions = random_matrix<T>(config.context_length, config.dim, rng, kStd, false, false);
    enc.ln_gain = constant_vector<T>(config.dim, T(1), false);
    enc.ln_bias = constant_vector<T>(config.dim, T(0), false);
    enc.projection = random_matrix<T>(config.dim, config.dim, rng, kStd, true, false);
    return enc;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> LanguageEncoderParams<T>::named() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        auto part = blocks[i].named("lang.block" + std::to_string(i));
        out.insert(out.end(), part.begin(), part.end());
    }
    out.emplace_back("lang.positions", positions);
    out.emplace_back("lang.ln_final.gain", ln_gain);
    out.emplace_back("lang.ln_final.bias", ln_bias);
    out.emplace_back("lang.proj", projection);
    return out;
}

template <typename T>
void LanguageEncoderParams<T>::save(dataio::TensorArchive& archive) const {
    for (const auto& [name, t] : named()) archive.add(name, t);
    archive.set_metadata("lang.heads", std::to_string(config.heads));
}

template <typename T>
bool LanguageEncoderParams<T>::present_in(const dataio::TensorArchive& archive) {
    return archive.contains("lang.proj");
}

template <typename T>
LanguageEncoderParams<T> LanguageEncoderParams<T>::load(const dataio::TensorArchive& archive) {
    LanguageEncoderParams enc;
    for (std::size_t i = 0; archive.contains("lang.block" + std::to_string(i) + ".attn.wq"); ++i)
        enc.blocks.push_back(TransformerBlock<T>::from_archive(archive, "lang.block" + std::to_string(i), false));
    enc.positions = load_tensor<T>(archive, "lang.positions", false);
    enc.ln_gain = load_tensor<T>(archive, "lang.ln_final.gain", false);
    enc.ln_bias = load_tensor<T>(archive, "lang.ln_final.bias", false);
    enc.projection = load_tensor<T>(archive, "lang.proj", false);
    const std::size_t d = enc.projection.cols();
    if (enc.projection.dims() != Shape{d, d} || enc.positions.cols() != d || enc.ln_gain.size() != d)
        throw DimensionError("language encoder tensors disagree on width");
    for (const auto& b : enc.blocks)
        if (b.w_query.rows() != d) throw DimensionError("language encoder block width differs");
    enc.config.dim = d;
    enc.config.layers = enc.blocks.size();
    enc.config.context_length = enc.positions.rows();
    if (auto h = archive.metadata("lang.heads")) enc.config.heads = std::stoul(*h);
    return enc;
}

// ------------------------------------------------------------------ forward

template <typename T>
Voken<T> generate_visual_tokens(const GeneratorParams<T>& generator, const Tensor<T>& exemplar_features,
                                Rng* dropout_rng) {
    const std::size_t m = exemplar_features.empty() ? 0 : exemplar_features.rows();
    if (m == 0) throw ReferenceError("generate_visual_tokens: no exemplar features");
    if (exemplar_features.cols() != generator.dim())
        throw DimensionError("generate_visual_tokens: exemplar width " + std::to_string(exemplar_features.cols()) +
                             " vs generator width " + std::to_string(generator.dim()));
    const std::size_t p = generator.tokens();
    std::vector<T> key_bias(p + m, T(0));
    std::fill(key_bias.begin() + static_cast<std::ptrdiff_t>(p), key_bias.end(),
              -std::log(static_cast<T>(m)));

    auto x = concat_rows<T>({generator.queries, exemplar_features});
    const AttentionOptions opts{generator.config.heads, false};
    const BlockRegularization reg{generator.config.path_dropout, generator.config.channel_dropout};
    for (const auto& block : generator.blocks) x = transformer_block(block, x, opts, std::span<const T>(key_bias), reg, dropout_rng);
    return {slice_rows(x, 0, p)};
}

template <typename T>
Tensor<T> encode_hidden(const LanguageEncoderParams<T>& encoder, const Tensor<T>& tokens) {
    const std::size_t len = tokens.empty() ? 0 : tokens.rows();
    if (len == 0) throw DimensionError("encode_sequence: empty token sequence");
    if (len > encoder.context_length())
        throw DimensionError("encode_sequence: " + std::to_string(len) + " tokens exceed context length " +
                             std::to_string(encoder.context_length()));
    if (tokens.cols() != encoder.dim())
        throw DimensionError("encode_sequence: token width " + std::to_string(tokens.cols()) + " vs encoder width " +
                             std::to_string(encoder.dim()));
    auto x = add(tokens.ndim() == 2 ? tokens : concat_rows<T>({tokens}), slice_rows(encoder.positions, 0, len));
    const AttentionOptions opts{encoder.config.heads, true};
    for (const auto& block : encoder.blocks) x = transformer_block<T>(block, x, opts, {}, {}, nullptr);
    return layer_norm(x, encoder.ln_gain, encoder.ln_bias);
}

template <typename T>
Tensor<T> encode_sequence(const LanguageEncoderParams<T>& encoder, const Tensor<T>& tokens) {
    const auto hidden = encode_hidden(encoder, tokens);
    return l2_normalize(matmul(slice_rows(hidden, hidden.rows() - 1, 1), encoder.projection));
}

template <typename T>
ClassifierBank<T> build_classifier_weights(const GeneratorParams<T>* generator,
                                           const LanguageEncoderParams<T>& encoder,
                                           std::span<const ClassReferenceSet<T>> references,
                                           const BankRequest& request, T tau_t, Rng* dropout_rng) {
    if (references.empty()) throw ReferenceError("build_classifier_weights: no classes");
    const bool visual = request.vision || request.multimodal;
    if (visual && generator == nullptr)
        throw ReferenceError("build_classifier_weights: vision/multi-modal weights need a token generator");
    if (visual && generator->dim() != encoder.dim())
        throw DimensionError("generator and language encoder widths differ");

    std::vector<Tensor<T>> text_rows, vision_rows, multi_rows;
    ClassifierBank<T> bank;
    bank.tau_t = tau_t;
    for (const auto& ref : references) {
        bank.class_ids.push_back(ref.id);
        const bool has_text = !ref.text_tokens.empty() && ref.text_tokens.rows() > 0;
        if (!has_text) throw ReferenceError("class '" + ref.id + "' has no text tokens");
        if (request.text) text_rows.push_back(encode_sequence(encoder, ref.text_tokens));
        if (!visual) continue;
        if (!ref.has_exemplars())
            throw ReferenceError("class '" + ref.id + "' has no exemplars; only the text classifier is available");
        const auto voken = generate_visual_tokens(*generator, ref.exemplars, dropout_rng);
        if (request.vision) vision_rows.push_back(encode_sequence(encoder, voken.tokens));
        if (request.multimodal) {
            const std::size_t p = voken.tokens.rows();
            const std::size_t room = encoder.context_length() > p ? encoder.context_length() - p : 0;
            const std::size_t keep = std::min(room, ref.text_tokens.rows());
            auto sequence = keep == 0 ? voken.tokens
                                      : concat_rows<T>({voken.tokens, slice_rows(ref.text_tokens, 0, keep)});
            multi_rows.push_back(encode_sequence(encoder, sequence));
        }
    }
    if (request.text) bank.text = concat_rows(text_rows);
    if (request.vision) bank.vision = concat_rows(vision_rows);
    if (request.multimodal) bank.multimodal = concat_rows(multi_rows);
    bank.validate();
    return bank;
}

#define MODREF_INSTANTIATE_ENCODERS(T)                                                               \
    template struct TransformerBlock<T>;                                                             \
    template struct GeneratorParams<T>;                                                              \
    template struct LanguageEncoderParams<T>;                                                        \
    template Tensor<T> transformer_block(const TransformerBlock<T>&, const Tensor<T>&,               \
                                         const AttentionOptions&, std::span<const T>,                \
                                         const BlockRegularization&, Rng*);                          \
    template Voken<T> generate_visual_tokens(const GeneratorParams<T>&, const Tensor<T>&, Rng*);     \
    template Tensor<T> encode_hidden(const LanguageEncoderParams<T>&, const Tensor<T>&);             \
    template Tensor<T> encode_sequence(const LanguageEncoderParams<T>&, const Tensor<T>&);           \
    template ClassifierBank<T> build_classifier_weights(const GeneratorParams<T>*,                   \
                                                        const LanguageEncoderParams<T>&,             \
                                                        std::span<const ClassReferenceSet<T>>,       \
                                                        const BankRequest&, T, Rng*);

MODREF_INSTANTIATE_ENCODERS(float)
MODREF_INSTANTIATE_ENCODERS(double)

}  // namespace modref
