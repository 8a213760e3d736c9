// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <set>

#include "modref/archive.hpp"
#include "modref/dataset.hpp"
#include "modref/errors.hpp"
#include "support.hpp"

using namespace modref;
using namespace modref::dataio;
using namespace modref::testing;
using doctest::Approx;

TEST_SUITE("archive") {
    TEST_CASE("round trip is bitwise, including odd floats") {
        Rng rng(1);
        TensorArchive a;
        a.add("scalar", Shape{}, std::vector<float>{3.25f});
        a.add("denormal", Shape{3}, std::vector<float>{1e-45f, -0.0f, std::numeric_limits<float>::max()});
        a.add("matrix", random_tensor<float>({7, 5}, rng));
        a.add("cube", random_tensor<float>({2, 3, 4}, rng));
        a.set_metadata("creator", "unit test");
        a.set_metadata("seed", "1");
        const auto bytes = encode_archive(a);
        CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "OVMA");
        const auto b = decode_archive(bytes);
        CHECK(a == b);
        CHECK(encode_archive(b) == bytes);
        CHECK(b.metadata("creator") == std::optional<std::string>("unit test"));
        CHECK(!b.metadata("missing"));

        const auto dir = scratch_dir("archive");
        write_archive(dir / "a.ovma", a);
        CHECK(read_archive(dir / "a.ovma") == a);
        CHECK(!std::filesystem::exists(dir / "a.ovma.tmp"));
    }

    TEST_CASE("empty archive is valid") {
        const auto bytes = encode_archive(TensorArchive{});
        CHECK(bytes.size() == 12);
        CHECK(decode_archive(bytes).size() == 0);
    }

    TEST_CASE("corruption is reported with a byte offset") {
        TensorArchive a;
        a.add("x", Shape{2}, std::vector<float>{1, 2});
        auto bytes = encode_archive(a);

        auto bad_magic = bytes;
        bad_magic[0] = 'X';
        CHECK_THROWS_AS(decode_archive(bad_magic), FormatError);
        try {
            decode_archive(bad_magic);
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
        }
        auto bad_version = bytes;
        bad_version[4] = 9;
        CHECK_THROWS_AS(decode_archive(bad_version), FormatError);
        for (std::size_t cut = 1; cut < bytes.size(); ++cut)
            CHECK_THROWS_AS(decode_archive(std::span<const std::uint8_t>(bytes.data(), cut)), FormatError);
        auto trailing = bytes;
        trailing.push_back(0);
        CHECK_THROWS_AS(decode_archive(trailing), FormatError);
        auto bad_dtype = bytes;
        bad_dtype[12 + 2 + 1] = 7;  // header | u16 name length | "x" | dtype
        CHECK_THROWS_AS(decode_archive(bad_dtype), FormatError);
    }

    TEST_CASE("names are unique and lookups are checked") {
        TensorArchive a;
        a.add("x", Shape{1}, std::vector<float>{1});
        CHECK_THROWS_AS(a.add("x", Shape{1}, std::vector<float>{2}), ValidationError);
        CHECK_THROWS_AS(a.get("y"), ReferenceError);
        CHECK_THROWS_AS(read_archive("/nonexistent/dir/file.ovma"), IoError);
    }
}

TEST_SUITE("fixture") {
    TEST_CASE("same seed, same bytes; different seed, different bytes") {
        const auto a = generate_fixture({}), b = generate_fixture({});
        CHECK(encode_archive(a.archive) == encode_archive(b.archive));
        CHECK(to_json(a.manifest) == to_json(b.manifest));
        FixtureOptions other;
        other.seed = 8;
        CHECK(encode_archive(generate_fixture(other).archive) != encode_archive(a.archive));
    }

    TEST_CASE("shape of the standard fixture") {
        const auto ds = generate_fixture({});
        CHECK(ds.manifest.classes.size() == 20);
        CHECK(ds.manifest.dim == 64);
        CHECK_NOTHROW(validate(ds.manifest, ds.archive));
        std::size_t ambiguous = 0;
        for (const auto& c : ds.manifest.classes) {
            ambiguous += c.ambiguous_text;
            CHECK(ds.archive.get(c.exemplars_key).dims == Shape{24, 64});
            CHECK(ds.archive.get(c.targets_key).dims == Shape{24, 64});
            CHECK(ds.archive.get(c.text_key).dims == Shape{4, 64});
        }
        CHECK(ambiguous == 10);
    }

    TEST_CASE("ambiguous classes carry another class's text") {
        for (double fraction : {0.05, 0.15, 0.5, 1.0}) {
            FixtureOptions o;
            o.text_ambiguity_fraction = fraction;
            o.noise_sigma = 0.0;
            o.text_noise = 0.0;
            const auto ds = generate_fixture(o);
            const auto refs = materialize(ds);
            std::size_t flagged = 0;
            for (std::size_t k = 0; k < refs.size(); ++k) {
                // Text centroid vs own prototype (sigma = 0: every exemplar is the prototype).
                const auto& t = refs[k].text_tokens;
                double dot = 0, tn = 0;
                for (std::size_t j = 0; j < 64; ++j) {
                    double mean = 0;
                    for (std::size_t r = 0; r < t.rows(); ++r) mean += t.at(r, j);
                    dot += mean * refs[k].exemplars.at(0, j);
                    tn += mean * mean;
                }
                const bool own = dot / std::sqrt(tn) > 0.9;
                CHECK(own == !ds.manifest.classes[k].ambiguous_text);
                flagged += ds.manifest.classes[k].ambiguous_text;
            }
            CHECK(flagged == static_cast<std::size_t>(std::llround(fraction * 20)));
        }
    }

    TEST_CASE("sigma = 0 reproduces the prototype exactly") {
        FixtureOptions o;
        o.noise_sigma = 0.0;
        const auto refs = materialize(generate_fixture(o));
        for (const auto& r : refs) {
            const auto first = slice_rows(r.exemplars, 0, 1);
            for (std::size_t i = 0; i < r.exemplars.rows(); ++i)
                CHECK(max_abs_diff(slice_rows(r.exemplars, i, 1), first) == 0.0);
            for (std::size_t i = 0; i < r.targets.rows(); ++i)
                CHECK(max_abs_diff(slice_rows(r.targets, i, 1), first) == 0.0);
        }
    }

    TEST_CASE("nearest-prototype accuracy falls as sigma grows") {
        FixtureOptions clean;
        clean.noise_sigma = 0.0;
        std::vector<Tensor<float>> prototypes;
        for (const auto& r : materialize(generate_fixture(clean))) prototypes.push_back(slice_rows(r.exemplars, 0, 1));
        std::vector<double> acc;
        for (double sigma : {0.1, 0.3, 0.6}) {
            FixtureOptions o;
            o.noise_sigma = sigma;
            std::vector<Tensor<float>> samples;
            for (const auto& r : materialize(generate_fixture(o))) samples.push_back(r.targets);
            acc.push_back(nearest_prototype_accuracy(prototypes, samples));
        }
        INFO(acc[0] << " " << acc[1] << " " << acc[2]);
        CHECK(acc[0] >= acc[1]);
        CHECK(acc[1] > acc[2]);
    }

    TEST_CASE("invalid options") {
        FixtureOptions o;
        o.text_ambiguity_fraction = 1.5;
        CHECK_THROWS_AS(generate_fixture(o), ValidationError);
        o = {};
        o.classes = 1;
        CHECK_THROWS_AS(generate_fixture(o), ValidationError);
        o = {};
        o.shots = 1;
        CHECK_THROWS_AS(generate_fixture(o), ValidationError);
        o = {};
        o.noise_sigma = -1;
        CHECK_THROWS_AS(generate_fixture(o), ValidationError);
    }
}

TEST_SUITE("manifest") {
    TEST_CASE("json round trip and on-disk load") {
        const auto ds = generate_fixture({});
        const auto text = to_json(ds.manifest);
        CHECK(to_json(manifest_from_json(text)) == text);

        const auto dir = scratch_dir("manifest");
        std::filesystem::create_directories(dir / "data");
        write_archive(dir / "data" / ds.manifest.archive, ds.archive);
        save_manifest(dir / "data" / "fx.json", ds.manifest);
        const auto loaded = load_dataset(dir / "data" / "fx.json");
        CHECK(loaded.archive == ds.archive);
        const auto refs = materialize(loaded, {16});
        CHECK(refs.size() == 20);
        CHECK(refs[0].exemplars.rows() == 16);
        CHECK(refs[0].targets.rows() == 24);
        for (std::size_t r = 0; r < refs[0].exemplars.rows(); ++r) {
            double n = 0;
            for (std::size_t j = 0; j < 64; ++j) n += double(refs[0].exemplars.at(r, j)) * refs[0].exemplars.at(r, j);
            CHECK(std::sqrt(n) == Approx(1.0).epsilon(1e-6));
        }
        // The encoder is recreated from the manifest seed.
        dataio::TensorArchive x, y;
        language_encoder_for(loaded).save(x);
        LanguageEncoderParams<float>::synthesize(ds.manifest.encoder).save(y);
        CHECK(x == y);
    }

    TEST_CASE("validation catches broken manifests") {
        auto ds = generate_fixture({});
        auto m = ds.manifest;
        m.classes[1].id = m.classes[0].id;
        CHECK_THROWS_AS(validate(m, ds.archive), ValidationError);
        m = ds.manifest;
        m.classes[2].text_key = "nope";
        CHECK_THROWS(validate(m, ds.archive));
        m = ds.manifest;
        m.dim = 32;
        CHECK_THROWS(validate(m, ds.archive));
        CHECK_THROWS_AS(manifest_from_json("{\"version\": 1}"), ValidationError);
        CHECK_THROWS_AS(manifest_from_json("not json"), ValidationError);
    }
}

TEST_SUITE("splits") {
    DatasetManifest manifest_with(std::size_t classes) {
        FixtureOptions o;
        o.classes = classes;
        o.shots = 2;
        o.dim = 4;
        return generate_fixture(o).manifest;
    }

    TEST_CASE("first ceil(fraction * C) sorted ids are base") {
        auto m = manifest_with(10);
        std::reverse(m.classes.begin(), m.classes.end());
        const auto [base, novel] = split_base_novel(m, 0.5);
        CHECK(base.classes.size() == 5);
        CHECK(novel.classes.size() == 5);
        CHECK(base.classes.front().id == "c000");
        CHECK(novel.classes.front().id == "c005");
        for (const auto& c : base.classes) CHECK(c.split == Split::Base);
        for (const auto& c : novel.classes) CHECK(c.split == Split::Novel);

        const auto [b3, n3] = split_base_novel(manifest_with(3), 0.5);
        CHECK(b3.classes.size() == 2);
        CHECK(n3.classes.size() == 1);
    }

    TEST_CASE("splits partition the classes") {
        const auto m = manifest_with(17);
        for (double f : {0.1, 0.33, 0.5, 0.9}) {
            const auto [b, n] = split_base_novel(m, f);
            std::set<std::string> ids;
            for (const auto& c : b.classes) ids.insert(c.id);
            for (const auto& c : n.classes) CHECK(ids.insert(c.id).second);
            CHECK(ids.size() == 17);
        }
    }

    TEST_CASE("degenerate fractions") {
        const auto m = manifest_with(3);
        CHECK_THROWS_AS(split_base_novel(m, 0.0), ValidationError);
        CHECK_THROWS_AS(split_base_novel(m, 1.0), ValidationError);
        CHECK_THROWS_AS(split_base_novel(m, 0.99), ValidationError);
    }
}
