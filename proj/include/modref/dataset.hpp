// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset manifests (JSON) over a companion tensor archive, the base/novel
// split, and the synthetic fixture generator.
//
// Manifest schema (version 1):
//   {
//     "version": 1, "d": 64, "archive": "fixture.ovma", "provenance": "...",
//     "encoder": {"seed": 7, "layers": 4, "context_length": 77},
//     "classes": [{"id": "c000", "name": "class_000", "split": "base",
//                  "exemplars": "class/c000/exemplars", "text": "class/c000/text",
//                  "targets": "class/c000/targets", "ambiguous_text": false}, ...]
//   }
// "archive" is relative to the manifest's directory. "targets" may be "".

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "modref/archive.hpp"
#include "modref/encoders.hpp"
#include "modref/references.hpp"

namespace modref::dataio {

enum class Split { Base, Novel };

struct ManifestClass {
    std::string id;
    std::string name;
    Split split = Split::Base;
    std::string exemplars_key;
    std::string text_key;
    std::string targets_key;
    bool ambiguous_text = false;
};

struct DatasetManifest {
    int version = 1;
    std::size_t dim = 0;
    std::string archive;
    std::string provenance;
    LanguageEncoderConfig encoder;
    std::vector<ManifestClass> classes;
};

std::string to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Ids unique, keys resolve, every tensor is (rows x d) and finite.
void validate(const DatasetManifest& manifest, const TensorArchive& archive);

/// A manifest together with its archive, as loaded from disk.
struct Dataset {
    DatasetManifest manifest;
    TensorArchive archive;
};

/// Loads and validates. Archive path resolves relative to the manifest.
Dataset load_dataset(const std::filesystem::path& manifest_path);

struct MaterializeOptions {
    /// Keep only the first n exemplar rows per class (0 = all).
    std::size_t max_exemplars = 0;
};

/// Per-class views with exemplar and target rows L2-normalized; labels are
/// positions in the manifest.
std::vector<ClassReferenceSet<float>> materialize(const Dataset& dataset, const MaterializeOptions& options = {});

/// The frozen encoder the dataset was built for: the archive's "lang.*"
/// tensors when present, otherwise synthesized from the manifest's seed.
LanguageEncoderParams<float> language_encoder_for(const Dataset& dataset);

/// First ceil(fraction * C) classes by sorted id become base, the rest novel.
std::pair<DatasetManifest, DatasetManifest> split_base_novel(const DatasetManifest& manifest, double fraction);

struct FixtureOptions {
    std::uint64_t seed = 7;
    std::size_t classes = 20;
    std::size_t dim = 64;
    std::size_t shots = 24;
    double text_ambiguity_fraction = 0.5;
    double noise_sigma = 0.3;
    std::size_t text_length = 4;
    double text_noise = 0.1;
    std::string archive_name = "fixture.ovma";
};

/// Unit-norm class prototypes; `shots` exemplar and `shots` target features
/// per class (prototype + N(0, sigma^2) per coordinate, renormalized); text
/// tokens near the prototype. round(fraction * C) classes get another
/// class's text (pairwise swaps, a 3-cycle for an odd remainder).
Dataset generate_fixture(const FixtureOptions& options);

}  // namespace modref::dataio
