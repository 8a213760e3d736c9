// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor archive (".ovma"). Layout, all integers little-endian:
//
//   magic "OVMA" | u32 version = 1 | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 dtype (0 = f32) | u8 ndim
//               | ndim x u32 dims | row-major f32 payload
//
// Archive metadata (creator, seed, ...) rides along as ordinary tensors named
// "__meta__.<key>" holding the UTF-8 bytes of the value, one byte per f32.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "modref/tensor.hpp"

namespace modref::dataio {

inline constexpr char kArchiveMagic[4] = {'O', 'V', 'M', 'A'};
inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr const char* kMetaPrefix = "__meta__.";

struct ArchiveEntry {
    std::string name;
    Shape dims;
    std::vector<float> values;
};

/// Ordered collection of uniquely named f32 tensors plus string metadata.
class TensorArchive {
public:
    void add(std::string name, Shape dims, std::vector<float> values);
    template <typename T>
    void add(std::string name, const Tensor<T>& tensor) {
        add(std::move(name), tensor.dims(),
            std::vector<float>(tensor.data().begin(), tensor.data().end()));
    }

    bool contains(const std::string& name) const;
    /// Throws ReferenceError when absent.
    const ArchiveEntry& get(const std::string& name) const;
    template <typename T>
    Tensor<T> tensor(const std::string& name, bool requires_grad = false) const {
        const auto& e = get(name);
        return Tensor<T>(e.dims, std::vector<T>(e.values.begin(), e.values.end()), requires_grad);
    }

    const std::vector<ArchiveEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    void set_metadata(const std::string& key, const std::string& value) { metadata_[key] = value; }
    std::optional<std::string> metadata(const std::string& key) const;
    const std::map<std::string, std::string>& all_metadata() const { return metadata_; }

    friend bool operator==(const TensorArchive& a, const TensorArchive& b);

private:
    std::vector<ArchiveEntry> entries_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, std::string> metadata_;
};

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive);
/// Throws FormatError naming the byte offset of the first problem.
TensorArchive decode_archive(std::span<const std::uint8_t> bytes);

/// Writes to "<path>.tmp" then renames over `path`.
void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

/// Atomic text write (temp file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& contents);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

}  // namespace modref::dataio
