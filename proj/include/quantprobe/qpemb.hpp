#pragma once

// QPEMB: little-endian container for per-example token embedding matrices.
//
//   header : magic "QPEM" | version u32 = 1 | dim u32 | count u64
//   record : id u64 | token_count u32 | token_count * dim binary32, row-major

#include <quantprobe/errors.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace quantprobe::qpemb {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr char kMagic[4] = {'Q', 'P', 'E', 'M'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 4 + 4 + 4 + 8;
inline constexpr std::size_t kRecordPrefixSize = 8 + 4;

struct Record {
    std::uint64_t id = 0;
    FloatMatrix values;  // token_count x dim

    bool operator==(const Record& o) const {
        return id == o.id && values.rows() == o.values.rows() && values.cols() == o.values.cols() &&
               std::memcmp(values.data(), o.values.data(), sizeof(float) * std::size_t(values.size())) == 0;
    }
};

struct File {
    std::uint32_t dim = 0;
    std::vector<Record> records;
};

inline std::size_t encoded_size(std::uint32_t dim, std::span<const Record> records) {
    std::size_t n = kHeaderSize;
    for (const auto& r : records) n += kRecordPrefixSize + sizeof(float) * std::size_t(r.values.rows()) * dim;
    return n;
}

namespace detail {

template <class T>
void put_le(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(char((value >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(std::string_view in, std::size_t pos) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

}  // namespace detail

inline std::string encode(std::uint32_t dim, std::span<const Record> records) {
    if (dim == 0) throw FormatError("qpemb: dim must be > 0");
    std::unordered_set<std::uint64_t> ids;
    for (const auto& r : records) {
        if (r.values.cols() != Eigen::Index(dim))
            throw FormatError("qpemb: record " + std::to_string(r.id) + " has dim " +
                              std::to_string(r.values.cols()) + ", file dim " + std::to_string(dim));
        if (r.values.rows() < 1) throw FormatError("qpemb: record " + std::to_string(r.id) + " is empty");
        if (!ids.insert(r.id).second) throw FormatError("qpemb: duplicate id " + std::to_string(r.id));
    }
    std::string out;
    out.reserve(encoded_size(dim, records));
    out.append(kMagic, 4);
    detail::put_le<std::uint32_t>(out, kVersion);
    detail::put_le<std::uint32_t>(out, dim);
    detail::put_le<std::uint64_t>(out, records.size());
    for (const auto& r : records) {
        detail::put_le<std::uint64_t>(out, r.id);
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.values.rows()));
        for (Eigen::Index i = 0; i < r.values.size(); ++i)
            detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(r.values.data()[i]));
    }
    return out;
}

inline File decode(std::string_view bytes) {
    auto need = [&](std::size_t pos, std::size_t n, const char* what) {
        if (bytes.size() < pos + n)
            throw FormatError("qpemb: truncated " + std::string(what) + " at byte offset " +
                                  std::to_string(pos) + " (file is " + std::to_string(bytes.size()) +
                                  " bytes)",
                              pos);
    };
    need(0, kHeaderSize, "header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("qpemb: bad magic at byte offset 0", 0);
    const auto version = detail::get_le<std::uint32_t>(bytes, 4);
    if (version != kVersion)
        throw FormatError("qpemb: unsupported version " + std::to_string(version) + " at byte offset 4", 4);
    File file;
    file.dim = detail::get_le<std::uint32_t>(bytes, 8);
    if (file.dim == 0) throw FormatError("qpemb: dim must be > 0 (byte offset 8)", 8);
    const auto count = detail::get_le<std::uint64_t>(bytes, 12);
    // Every record takes at least its prefix plus one row; don't trust `count` for reserve.
    const std::size_t min_record = kRecordPrefixSize + sizeof(float) * file.dim;
    file.records.reserve(std::min<std::uint64_t>(count, (bytes.size() - kHeaderSize) / min_record));
    std::unordered_set<std::uint64_t> ids;
    std::size_t pos = kHeaderSize;
    for (std::uint64_t k = 0; k < count; ++k) {
        const std::size_t record_offset = pos;
        need(pos, kRecordPrefixSize, "record header");
        Record r;
        r.id = detail::get_le<std::uint64_t>(bytes, pos);
        const auto tokens = detail::get_le<std::uint32_t>(bytes, pos + 8);
        pos += kRecordPrefixSize;
        if (tokens == 0)
            throw FormatError("qpemb: record " + std::to_string(r.id) + " has zero tokens at byte offset " +
                                  std::to_string(record_offset),
                              record_offset);
        if (!ids.insert(r.id).second)
            throw FormatError("qpemb: duplicate id " + std::to_string(r.id) + " at byte offset " +
                                  std::to_string(record_offset),
                              record_offset);
        const std::size_t n = std::size_t(tokens) * file.dim;
        need(pos, n * sizeof(float), "record payload");
        r.values.resize(tokens, file.dim);
        for (std::size_t i = 0; i < n; ++i) {
            const float v = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, pos + 4 * i));
            if (!std::isfinite(v))
                throw FormatError("qpemb: non-finite value at byte offset " + std::to_string(pos + 4 * i),
                                  pos + 4 * i);
            r.values.data()[i] = v;
        }
        pos += n * sizeof(float);
        file.records.push_back(std::move(r));
    }
    if (pos != bytes.size())
        throw FormatError("qpemb: trailing bytes at byte offset " + std::to_string(pos), pos);
    return file;
}

inline void write(const std::filesystem::path& path, std::uint32_t dim, std::span<const Record> records) {
    const std::string bytes = encode(dim, records);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("qpemb: cannot write " + path.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw DataError("qpemb: write failed for " + path.string());
}

inline File read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingDataError("qpemb: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

}  // namespace quantprobe::qpemb
