// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "modref/archive.hpp"
#include "modref/classifiers.hpp"
#include "modref/encoders.hpp"
#include "modref/errors.hpp"
#include "support.hpp"

using namespace modref;
using namespace modref::testing;
using doctest::Approx;

namespace {

GeneratorParams<float> small_generator(std::size_t d = 16, std::size_t p = 2, std::uint64_t seed = 1) {
    return GeneratorParams<float>::initialize(GeneratorConfig{p, d, 1, 0.1, 0.1, 0.02}, seed);
}

double row_norm(const Tensor<float>& x, std::size_t r) {
    double s = 0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += double(x.at(r, c)) * x.at(r, c);
    return std::sqrt(s);
}

}  // namespace

TEST_SUITE("visual token generator") {
    TEST_CASE("output is P x d for any number of exemplars") {
        Rng rng(1);
        for (std::size_t p : {1, 2, 4}) {
            const auto gen = small_generator(16, p);
            CHECK(gen.blocks.size() == kGeneratorLayers);
            for (std::size_t m : {1, 5, 64}) {
                const auto v = generate_visual_tokens(gen, unit_rows<float>(m, 16, rng));
                CHECK(v.tokens.dims() == Shape{p, 16});
                for (float x : v.tokens.data()) CHECK(std::isfinite(x));
            }
        }
    }

    TEST_CASE("permutation and duplication of exemplars leave the tokens unchanged") {
        Rng rng(2);
        for (int trial = 0; trial < 10; ++trial) {
            const auto gen = small_generator(16, 2, 10 + trial);
            const std::size_t m = 1 + rng.uniform_int(0, 11);
            const auto e = unit_rows<float>(m, 16, rng);
            std::vector<std::size_t> perm(m), dup(2 * m);
            std::iota(perm.begin(), perm.end(), 0);
            rng.shuffle(std::span<std::size_t>(perm));
            for (std::size_t i = 0; i < 2 * m; ++i) dup[i] = i % m;
            const auto base = generate_visual_tokens(gen, e).tokens;
            CHECK(max_abs_diff(base, generate_visual_tokens(gen, rows_of(e, perm)).tokens) < 1e-5);
            CHECK(max_abs_diff(base, generate_visual_tokens(gen, rows_of(e, dup)).tokens) < 1e-5);
        }
    }

    TEST_CASE("dropout only acts when a generator is supplied") {
        Rng rng(3);
        auto gen = small_generator();
        gen.config.path_dropout = 0.5;
        gen.config.channel_dropout = 0.5;
        const auto e = unit_rows<float>(4, 16, rng);
        const auto eval1 = generate_visual_tokens(gen, e).tokens;
        CHECK(max_abs_diff(eval1, generate_visual_tokens(gen, e).tokens) == 0.0);
        double moved = 0;
        for (int i = 0; i < 8; ++i) moved = std::max(moved, max_abs_diff(eval1, generate_visual_tokens(gen, e, &rng).tokens));
        CHECK(moved > 0.0);
    }

    TEST_CASE("errors") {
        const auto gen = small_generator();
        CHECK_THROWS_AS(generate_visual_tokens(gen, Tensor<float>::zeros({0, 16})), ReferenceError);
        CHECK_THROWS_AS(generate_visual_tokens(gen, Tensor<float>::full({2, 8}, 0.1f)), DimensionError);
    }

    TEST_CASE("archive round trip and snapshot") {
        const auto gen = small_generator(16, 2, 5);
        dataio::TensorArchive a;
        gen.save(a);
        CHECK(a.contains("vok.queries"));
        CHECK(a.contains("vok.block0.attn.wq"));
        CHECK(a.contains("vok.block3.mlp.fc2"));
        const auto loaded = GeneratorParams<float>::load(dataio::decode_archive(dataio::encode_archive(a)), false);
        dataio::TensorArchive b;
        loaded.save(b);
        CHECK(a == b);
        CHECK(loaded.config.path_dropout == Approx(gen.config.path_dropout));

        const auto snap = gen.snapshot();
        CHECK(snap.queries.id() != gen.queries.id());
        CHECK(!snap.queries.requires_grad());
        CHECK(max_abs_diff(snap.queries, gen.queries) == 0.0);
        CHECK(gen.parameters().size() == gen.named().size());
    }
}

TEST_SUITE("language encoder") {
    const auto enc = LanguageEncoderParams<float>::synthesize({16, 2, 12, 1, 3});

    TEST_CASE("output is a unit vector") {
        Rng rng(4);
        for (std::size_t len : {1, 3, 12}) {
            const auto w = encode_sequence(enc, random_tensor<float>({len, 16}, rng));
            CHECK(w.dims() == Shape{1, 16});
            CHECK(row_norm(w, 0) == Approx(1.0).epsilon(1e-6));
        }
    }

    TEST_CASE("causal prefix stability; appending a token changes the pooled output") {
        Rng rng(5);
        const auto t = random_tensor<float>({5, 16}, rng);
        const auto longer = concat_rows<float>({t, random_tensor<float>({1, 16}, rng)});
        CHECK(max_abs_diff(encode_hidden(enc, t), slice_rows(encode_hidden(enc, longer), 0, 5)) == 0.0);
        CHECK(max_abs_diff(encode_sequence(enc, t), encode_sequence(enc, longer)) > 1e-4);
    }

    TEST_CASE("deterministic, both for inputs and for the synthesized weights") {
        Rng rng(6);
        const auto t = random_tensor<float>({4, 16}, rng);
        const auto a = encode_sequence(enc, t), b = encode_sequence(enc, t);
        CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
        dataio::TensorArchive x, y;
        enc.save(x);
        LanguageEncoderParams<float>::synthesize({16, 2, 12, 1, 3}).save(y);
        CHECK(x == y);
        CHECK(LanguageEncoderParams<float>::present_in(x));
        dataio::TensorArchive z;
        LanguageEncoderParams<float>::load(x).save(z);
        CHECK(x == z);
        for (const auto& [name, tensor] : enc.named()) CHECK_MESSAGE(!tensor.requires_grad(), name);
    }

    TEST_CASE("sequence length is bounded") {
        CHECK_THROWS_AS(encode_sequence(enc, Tensor<float>::zeros({0, 16})), DimensionError);
        CHECK_THROWS_AS(encode_sequence(enc, Tensor<float>::full({13, 16}, 0.1f)), DimensionError);
        CHECK_THROWS_AS(encode_sequence(enc, Tensor<float>::full({2, 8}, 0.1f)), DimensionError);
    }
}

TEST_SUITE("classifier weights") {
    std::vector<ClassReferenceSet<float>> refs_for(std::size_t classes, std::size_t d, std::size_t text_len, Rng& rng) {
        std::vector<ClassReferenceSet<float>> refs;
        for (std::size_t k = 0; k < classes; ++k)
            refs.push_back({"c" + std::to_string(k), k, unit_rows<float>(3, d, rng),
                            random_tensor<float>({text_len, d}, rng, 0.5), {}});
        return refs;
    }

    TEST_CASE("three C x d banks with unit rows; identical classes give identical rows") {
        Rng rng(7);
        const auto gen = small_generator();
        const auto enc = LanguageEncoderParams<float>::synthesize({16, 2, 16, 1, 1});
        auto refs = refs_for(4, 16, 3, rng);
        refs[3].exemplars = refs[1].exemplars;
        refs[3].text_tokens = refs[1].text_tokens;
        const auto bank = build_classifier_weights<float>(&gen, enc, refs, {}, 0.01f);
        CHECK(bank.class_ids == std::vector<std::string>{"c0", "c1", "c2", "c3"});
        for (auto kind : {ClassifierKind::Text, ClassifierKind::Vision, ClassifierKind::MultiModal}) {
            const auto& w = bank.weights(kind);
            CHECK(w.dims() == Shape{4, 16});
            for (std::size_t r = 0; r < 4; ++r) CHECK(row_norm(w, r) == Approx(1.0).epsilon(1e-6));
            CHECK(max_abs_diff(slice_rows(w, 1, 1), slice_rows(w, 3, 1)) == 0.0);
        }
        // Vision and multi-modal rows differ from the text rows.
        CHECK(max_abs_diff(bank.weights(ClassifierKind::Vision), bank.weights(ClassifierKind::Text)) > 1e-3);
        CHECK(max_abs_diff(bank.weights(ClassifierKind::MultiModal), bank.weights(ClassifierKind::Vision)) > 1e-3);
    }

    TEST_CASE("text is truncated from the tail so vokens always fit") {
        Rng rng(8);
        const auto gen = small_generator();
        const auto enc = LanguageEncoderParams<float>::synthesize({16, 1, 77, 1, 1});
        auto refs = refs_for(2, 16, 76, rng);
        const auto bank = build_classifier_weights<float>(&gen, enc, refs, {}, 0.01f);
        const auto voken = generate_visual_tokens(gen, refs[0].exemplars).tokens;
        const auto expected = encode_sequence(enc, concat_rows<float>({voken, slice_rows(refs[0].text_tokens, 0, 75)}));
        CHECK(max_abs_diff(slice_rows(bank.weights(ClassifierKind::MultiModal), 0, 1), expected) == 0.0);
    }

    TEST_CASE("vision weights need exemplars and a generator") {
        Rng rng(9);
        const auto gen = small_generator();
        const auto enc = LanguageEncoderParams<float>::synthesize({16, 1, 16, 1, 1});
        auto refs = refs_for(3, 16, 2, rng);
        refs[2].exemplars = Tensor<float>::zeros({0, 16});
        CHECK_THROWS_AS(build_classifier_weights<float>(&gen, enc, refs, {}, 0.01f), ReferenceError);
        CHECK_THROWS_AS(build_classifier_weights<float>(nullptr, enc, refs, {true, true, false}, 0.01f),
                        ReferenceError);
        const auto text_only = build_classifier_weights<float>(nullptr, enc, refs, {true, false, false}, 0.01f);
        CHECK(text_only.has(ClassifierKind::Text));
        CHECK(!text_only.has(ClassifierKind::Vision));
        CHECK_THROWS_AS(text_only.weights(ClassifierKind::Vision), ReferenceError);
    }
}
