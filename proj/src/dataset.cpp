// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include "modref/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "modref/errors.hpp"
#include "modref/rng.hpp"

namespace modref::dataio {

using nlohmann::json;

namespace {

std::string split_name(Split s) { return s == Split::Base ? "base" : "novel"; }

Split parse_split(const std::string& s) {
    if (s == "base") return Split::Base;
    if (s == "novel") return Split::Novel;
    throw ValidationError("manifest: unknown split '" + s + "'");
}

template <typename V>
V field(const json& j, const char* key) {
    if (!j.contains(key)) throw ValidationError(std::string("manifest: missing key '") + key + "'");
    try {
        return j.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("manifest: bad value for '") + key + "': " + e.what());
    }
}

std::vector<float> normalized_rows(const ArchiveEntry& e, std::size_t keep_rows) {
    const std::size_t d = e.dims.back();
    std::vector<float> out(e.values.begin(), e.values.begin() + static_cast<std::ptrdiff_t>(keep_rows * d));
    for (std::size_t i = 0; i < keep_rows; ++i) {
        double ss = 0;
        for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(out[i * d + j]) * out[i * d + j];
        if (ss <= 0) throw DegenerateInputError("tensor '" + e.name + "' row " + std::to_string(i) + " is zero");
        const double inv = 1.0 / std::sqrt(ss);
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = static_cast<float>(out[i * d + j] * inv);
    }
    return out;
}

void check_matrix(const TensorArchive& archive, const std::string& key, std::size_t d, const std::string& cls,
                  bool allow_empty) {
    const auto& e = archive.get(key);
    if (e.dims.size() != 2 || e.dims[1] != d)
        throw ValidationError("class '" + cls + "': tensor '" + key + "' has shape " + shape_string(e.dims) +
                              ", expected rows x " + std::to_string(d));
    if (!allow_empty && e.dims[0] == 0) throw ValidationError("class '" + cls + "': tensor '" + key + "' is empty");
    for (float v : e.values)
        if (!std::isfinite(v)) throw ValidationError("tensor '" + key + "' has non-finite values");
}

}  // namespace

std::string to_json(const DatasetManifest& m) {
    json classes = json::array();
    for (const auto& c : m.classes)
        classes.push_back({{"id", c.id},
                           {"name", c.name},
                           {"split", split_name(c.split)},
                           {"exemplars", c.exemplars_key},
                           {"text", c.text_key},
                           {"targets", c.targets_key},
                           {"ambiguous_text", c.ambiguous_text}});
    json j = {{"version", m.version},
              {"d", m.dim},
              {"archive", m.archive},
              {"provenance", m.provenance},
              {"encoder",
               {{"seed", m.encoder.seed},
                {"layers", m.encoder.layers},
                {"context_length", m.encoder.context_length},
                {"heads", m.encoder.heads}}},
              {"classes", classes}};
    return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("manifest: invalid JSON: ") + e.what());
    }
    DatasetManifest m;
    m.version = field<int>(j, "version");
    if (m.version != 1) throw ValidationError("manifest: unsupported version " + std::to_string(m.version));
    m.dim = field<std::size_t>(j, "d");
    m.archive = field<std::string>(j, "archive");
    m.provenance = j.value("provenance", "");
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        m.encoder.seed = e.value("seed", std::uint64_t{0});
        m.encoder.layers = e.value("layers", std::size_t{4});
        m.encoder.context_length = e.value("context_length", std::size_t{77});
        m.encoder.heads = e.value("heads", std::size_t{1});
    }
    m.encoder.dim = m.dim;
    const auto classes = field<json>(j, "classes");
    if (!classes.is_array()) throw ValidationError("manifest: 'classes' must be an array");
    for (const auto& c : classes) {
        ManifestClass mc;
        mc.id = field<std::string>(c, "id");
        mc.name = c.value("name", mc.id);
        mc.split = parse_split(c.value("split", std::string("base")));
        mc.exemplars_key = c.value("exemplars", std::string());
        mc.text_key = field<std::string>(c, "text");
        mc.targets_key = c.value("targets", std::string());
        mc.ambiguous_text = c.value("ambiguous_text", false);
        m.classes.push_back(std::move(mc));
    }
    return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    write_text_atomic(path, to_json(manifest));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return manifest_from_json(ss.str());
}

void validate(const DatasetManifest& manifest, const TensorArchive& archive) {
    if (manifest.dim == 0) throw ValidationError("manifest: d must be positive");
    if (manifest.classes.empty()) throw ValidationError("manifest: no classes");
    std::set<std::string> ids;
    for (const auto& c : manifest.classes) {
        if (c.id.empty()) throw ValidationError("manifest: empty class id");
        if (!ids.insert(c.id).second) throw ValidationError("manifest: duplicate class id '" + c.id + "'");
        try {
            check_matrix(archive, c.text_key, manifest.dim, c.id, false);
            if (!c.exemplars_key.empty()) check_matrix(archive, c.exemplars_key, manifest.dim, c.id, true);
            if (!c.targets_key.empty()) check_matrix(archive, c.targets_key, manifest.dim, c.id, true);
        } catch (const ReferenceError& e) {
            throw ValidationError(std::string("manifest: ") + e.what());
        }
    }
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    Dataset ds;
    ds.manifest = load_manifest(manifest_path);
    const auto archive_path = manifest_path.parent_path() / ds.manifest.archive;
    ds.archive = read_archive(archive_path);
    validate(ds.manifest, ds.archive);
    return ds;
}

std::vector<ClassReferenceSet<float>> materialize(const Dataset& dataset, const MaterializeOptions& options) {
    const std::size_t d = dataset.manifest.dim;
    std::vector<ClassReferenceSet<float>> out;
    for (std::size_t i = 0; i < dataset.manifest.classes.size(); ++i) {
        const auto& c = dataset.manifest.classes[i];
        ClassReferenceSet<float> ref;
        ref.id = c.id;
        ref.label = i;
        const auto& text = dataset.archive.get(c.text_key);
        ref.text_tokens = Tensor<float>(text.dims, text.values);
        if (!c.exemplars_key.empty()) {
            const auto& e = dataset.archive.get(c.exemplars_key);
            std::size_t rows = e.dims[0];
            if (options.max_exemplars > 0) rows = std::min(rows, options.max_exemplars);
            ref.exemplars = Tensor<float>({rows, d}, normalized_rows(e, rows));
        } else {
            ref.exemplars = Tensor<float>::zeros({0, d});
        }
        if (!c.targets_key.empty()) {
            const auto& t = dataset.archive.get(c.targets_key);
            ref.targets = Tensor<float>({t.dims[0], d}, normalized_rows(t, t.dims[0]));
        } else {
            ref.targets = Tensor<float>::zeros({0, d});
        }
        out.push_back(std::move(ref));
    }
    return out;
}

LanguageEncoderParams<float> language_encoder_for(const Dataset& dataset) {
    if (LanguageEncoderParams<float>::present_in(dataset.archive)) {
        auto enc = LanguageEncoderParams<float>::load(dataset.archive);
        if (enc.dim() != dataset.manifest.dim) throw ValidationError("archive language encoder width differs from d");
        return enc;
    }
    auto config = dataset.manifest.encoder;
    config.dim = dataset.manifest.dim;
    return LanguageEncoderParams<float>::synthesize(config);
}

std::pair<DatasetManifest, DatasetManifest> split_base_novel(const DatasetManifest& manifest, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("split fraction must lie in (0, 1)");
    std::vector<std::size_t> order(manifest.classes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return manifest.classes[a].id < manifest.classes[b].id;
    });
    // Guard against 0.5 * 10 landing on 5.000000000001.
    const auto base_count =
        static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(order.size()) - 1e-9));
    if (base_count == 0 || base_count >= order.size())
        throw ValidationError("split leaves one side empty (" + std::to_string(base_count) + " of " +
                              std::to_string(order.size()) + " classes in base)");
    DatasetManifest base = manifest, novel = manifest;
    base.classes.clear();
    novel.classes.clear();
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto c = manifest.classes[order[i]];
        c.split = i < base_count ? Split::Base : Split::Novel;
        (i < base_count ? base : novel).classes.push_back(std::move(c));
    }
    return {std::move(base), std::move(novel)};
}

Dataset generate_fixture(const FixtureOptions& o) {
    if (o.classes < 2) throw ValidationError("fixture: need at least 2 classes");
    if (o.shots < 2) throw ValidationError("fixture: need at least 2 shots");
    if (o.dim == 0) throw ValidationError("fixture: dim must be positive");
    if (o.text_length == 0) throw ValidationError("fixture: text length must be positive");
    if (!(o.text_ambiguity_fraction >= 0.0 && o.text_ambiguity_fraction <= 1.0))
        throw ValidationError("fixture: ambiguity fraction must lie in [0, 1]");
    if (!(o.noise_sigma >= 0.0) || !std::isfinite(o.noise_sigma))
        throw ValidationError("fixture: noise sigma must be finite and >= 0");

    Rng rng(o.seed);
    const std::size_t c = o.classes, d = o.dim;
    auto unit_row = [&](std::span<const double> center, double sigma) {
        std::vector<double> v(d);
        double ss = 0;
        for (std::size_t j = 0; j < d; ++j) {
            v[j] = center[j] + (sigma > 0 ? rng.normal(0.0, sigma) : 0.0);
            ss += v[j] * v[j];
        }
        const double inv = 1.0 / std::sqrt(ss);
        std::vector<float> out(d);
        for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(v[j] * inv);
        return out;
    };
    auto random_direction = [&] {
        std::vector<double> v(d);
        double ss = 0;
        for (auto& x : v) {
            x = rng.normal();
            ss += x * x;
        }
        for (auto& x : v) x /= std::sqrt(ss);
        return v;
    };

    std::vector<std::vector<double>> prototypes(c);
    for (auto& p : prototypes) p = random_direction();

    // Text source for each class: itself, or another class for ambiguous ones.
    std::vector<std::size_t> text_source(c);
    std::iota(text_source.begin(), text_source.end(), 0);
    const auto n_ambiguous = static_cast<std::size_t>(std::llround(o.text_ambiguity_fraction * static_cast<double>(c)));
    std::vector<std::size_t> order(c);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_ambiguous));
    std::vector<bool> ambiguous(c, false);
    std::vector<double> stray;  // used only when a single class is ambiguous
    if (n_ambiguous == 1) {
        stray = random_direction();
        ambiguous[chosen[0]] = true;
    } else if (n_ambiguous >= 2) {
        std::size_t i = 0;
        for (; i + 3 != n_ambiguous && i + 1 < n_ambiguous; i += 2) std::swap(text_source[chosen[i]], text_source[chosen[i + 1]]);
        if (i + 3 == n_ambiguous) {
            text_source[chosen[i]] = chosen[i + 1];
            text_source[chosen[i + 1]] = chosen[i + 2];
            text_source[chosen[i + 2]] = chosen[i];
        }
        for (auto k : chosen) ambiguous[k] = true;
    }

    Dataset ds;
    auto& m = ds.manifest;
    m.dim = d;
    m.archive = o.archive_name;
    m.encoder.dim = d;
    m.encoder.seed = o.seed;
    std::ostringstream prov;
    prov << "synthetic fixture: seed=" << o.seed << " classes=" << c << " dim=" << d << " shots=" << o.shots
         << " ambiguity=" << o.text_ambiguity_fraction << " sigma=" << o.noise_sigma;
    m.provenance = prov.str();

    auto rows = [&](std::span<const double> center, std::size_t n, double sigma) {
        std::vector<float> out;
        out.reserve(n * d);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = unit_row(center, sigma);
            out.insert(out.end(), r.begin(), r.end());
        }
        return out;
    };

    char buf[32];
    for (std::size_t k = 0; k < c; ++k) {
        std::snprintf(buf, sizeof buf, "c%03zu", k);
        const std::string id = buf;
        std::snprintf(buf, sizeof buf, "class_%03zu", k);
        ManifestClass mc{id, buf, Split::Base, "class/" + id + "/exemplars", "class/" + id + "/text",
                         "class/" + id + "/targets", ambiguous[k]};
        ds.archive.add(mc.exemplars_key, {o.shots, d}, rows(prototypes[k], o.shots, o.noise_sigma));
        ds.archive.add(mc.targets_key, {o.shots, d}, rows(prototypes[k], o.shots, o.noise_sigma));
        const auto& text_center = (n_ambiguous == 1 && ambiguous[k]) ? stray : prototypes[text_source[k]];
        ds.archive.add(mc.text_key, {o.text_length, d}, rows(text_center, o.text_length, o.text_noise));
        m.classes.push_back(std::move(mc));
    }
    ds.archive.set_metadata("creator", "modref fixtures");
    ds.archive.set_metadata("seed", std::to_string(o.seed));
    return ds;
}

}  // namespace modref::dataio
