// Copyright (c) 2026 The modref authors
// SPDX-License-Identifier: Apache-2.0

#include "modref/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <system_error>

#include "modref/errors.hpp"

namespace modref::dataio {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <typename U>
    void le(U value) {
        for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
    std::size_t offset() const { return pos_; }
    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        if (in_.size() - pos_ < n)
            throw FormatError(std::string("archive truncated reading ") + what + " at byte offset " +
                              std::to_string(pos_));
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    template <typename U>
    U le(const char* what) {
        auto s = take(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(s[i]) << (8 * i));
        return v;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::vector<float> encode_string(const std::string& s) {
    std::vector<float> out;
    out.reserve(s.size());
    for (unsigned char ch : s) out.push_back(static_cast<float>(ch));
    return out;
}

}  // namespace

void TensorArchive::add(std::string name, Shape dims, std::vector<float> values) {
    if (name.empty() || name.size() > 0xFFFF) throw ValidationError("archive: tensor name length out of range");
    if (index_.count(name)) throw ValidationError("archive: duplicate tensor name '" + name + "'");
    if (dims.size() > 0xFF) throw ValidationError("archive: too many dims for '" + name + "'");
    for (auto d : dims)
        if (d > 0xFFFFFFFFull) throw ValidationError("archive: dim too large for '" + name + "'");
    if (shape_size(dims) != values.size())
        throw DimensionError("archive: '" + name + "' has " + std::to_string(values.size()) +
                             " values for shape " + shape_string(dims));
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(dims), std::move(values)});
}

bool TensorArchive::contains(const std::string& name) const { return index_.count(name) != 0; }

const ArchiveEntry& TensorArchive::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ReferenceError("archive has no tensor named '" + name + "'");
    return entries_[it->second];
}

std::optional<std::string> TensorArchive::metadata(const std::string& key) const {
    auto it = metadata_.find(key);
    if (it == metadata_.end()) return std::nullopt;
    return it->second;
}

bool operator==(const TensorArchive& a, const TensorArchive& b) {
    if (a.metadata_ != b.metadata_ || a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
        const auto& x = a.entries_[i];
        const auto& y = b.entries_[i];
        if (x.name != y.name || x.dims != y.dims || x.values.size() != y.values.size()) return false;
        // Bitwise, so NaN payloads and signed zeros count.
        if (std::memcmp(x.values.data(), y.values.data(), x.values.size() * sizeof(float)) != 0) return false;
    }
    return true;
}

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive) {
    Writer w;
    w.bytes(kArchiveMagic, 4);
    w.le<std::uint32_t>(kArchiveVersion);
    const auto& meta = archive.all_metadata();
    w.le<std::uint32_t>(static_cast<std::uint32_t>(archive.size() + meta.size()));
    auto emit = [&](const std::string& name, const Shape& dims, std::span<const float> values) {
        w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.le<std::uint8_t>(kDtypeF32);
        w.le<std::uint8_t>(static_cast<std::uint8_t>(dims.size()));
        for (auto d : dims) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (float v : values) w.f32(v);
    };
    for (const auto& e : archive.entries()) emit(e.name, e.dims, e.values);
    for (const auto& [key, value] : meta) {
        const auto bytes = encode_string(value);
        emit(kMetaPrefix + key, Shape{bytes.size()}, bytes);
    }
    return w.take();
}

TensorArchive decode_archive(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(4, "magic");
    if (std::memcmp(magic.data(), kArchiveMagic, 4) != 0) throw FormatError("archive: bad magic at byte offset 0");
    const auto version = r.le<std::uint32_t>("version");
    if (version != kArchiveVersion)
        throw FormatError("archive: unsupported version " + std::to_string(version) + " at byte offset 4");
    const auto count = r.le<std::uint32_t>("tensor count");
    TensorArchive archive;
    const std::string meta_prefix = kMetaPrefix;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = r.le<std::uint16_t>("name length");
        auto name_bytes = r.take(name_len, "name");
        std::string name(name_bytes.begin(), name_bytes.end());
        const auto dtype_at = r.offset();
        const auto dtype = r.le<std::uint8_t>("dtype");
        if (dtype != kDtypeF32)
            throw FormatError("archive: unsupported dtype " + std::to_string(dtype) + " at byte offset " +
                              std::to_string(dtype_at));
        const auto ndim = r.le<std::uint8_t>("ndim");
        Shape dims(ndim);
        for (auto& d : dims) d = r.le<std::uint32_t>("dims");
        const std::size_t n = shape_size(dims);
        if (n > (bytes.size() - r.offset()) / 4)
            throw FormatError("archive: truncated payload of '" + name + "' at byte offset " +
                              std::to_string(r.offset()));
        std::vector<float> values(n);
        for (auto& v : values) v = std::bit_cast<float>(r.le<std::uint32_t>("payload"));
        if (name.rfind(meta_prefix, 0) == 0) {
            std::string value;
            for (float v : values) value.push_back(static_cast<char>(static_cast<unsigned char>(v)));
            archive.set_metadata(name.substr(meta_prefix.size()), value);
        } else {
            try {
                archive.add(std::move(name), std::move(dims), std::move(values));
            } catch (const ValidationError& e) {
                throw FormatError(std::string(e.what()) + " (tensor ending at byte offset " +
                                  std::to_string(r.offset()) + ")");
            }
        }
    }
    if (!r.done())
        throw FormatError("archive: trailing bytes at byte offset " + std::to_string(r.offset()));
    return archive;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
    const auto bytes = encode_archive(archive);
    write_text_atomic(path, std::string(bytes.begin(), bytes.end()));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TensorArchive read_archive(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    return decode_archive(bytes);
}

}  // namespace modref::dataio
