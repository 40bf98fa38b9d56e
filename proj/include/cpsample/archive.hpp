// Copyright (C) 2026 the cpsample authors
// SPDX-License-Identifier: Apache-2.0
#ifndef CPSAMPLE_ARCHIVE_HPP
#define CPSAMPLE_ARCHIVE_HPP

#include <bit>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "cpsample/tensor.hpp"

namespace cpsample {

// Container for named tensors plus a metadata string. On disk ("CPTA"
// format, little-endian): magic, u32 version=1, u32 count, then per tensor
// u32 name length + name, u8 dtype (1=f32, 2=f64), u32 ndim, ndim x u64
// dims, raw values; trailing u32 metadata length + metadata.
struct TensorArchive {
    struct Entry {
        std::string name;
        Tensor tensor;
        std::uint8_t dtype = 2;  // 2 = f64 (default), 1 = f32 storage
    };
    std::vector<Entry> entries;
    std::string metadata;

    void put(std::string name, Tensor t, std::uint8_t dtype = 2) {
        CPS_REQUIRE(!name.empty(), "archive: empty tensor name");
        CPS_REQUIRE(dtype == 1 || dtype == 2, "archive: dtype must be 1 (f32) or 2 (f64)");
        CPS_REQUIRE(find(name) == nullptr, "archive: duplicate tensor name '", name, "'");
        entries.push_back({std::move(name), std::move(t), dtype});
    }

    const Tensor* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e.tensor;
        return nullptr;
    }

    const Tensor& get(const std::string& name) const {
        const Tensor* t = find(name);
        CPS_REQUIRE(t != nullptr, "archive: no tensor named '", name, "'");
        return *t;
    }
};

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}
inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(char(v)); }
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;
    explicit ByteReader(const std::string& b) : buf(b) {}

    void need(std::size_t n) const {
        CPS_REQUIRE(pos + n <= buf.size(), "read_archive: truncated file (need ", n,
                    " bytes at offset ", pos, ", have ", buf.size() - pos, ")");
    }
    std::uint8_t u8() {
        need(1);
        return std::uint8_t(buf[pos++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf[pos++])) << (8 * i);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline std::string encode_archive(const TensorArchive& ar) {
    using namespace detail;
    std::string out;
    out += "CPTA";
    put_u32(out, 1);
    put_u32(out, std::uint32_t(ar.entries.size()));
    for (const auto& e : ar.entries) {
        CPS_REQUIRE(e.dtype == 1 || e.dtype == 2, "write_archive: bad dtype for '", e.name, "'");
        put_u32(out, std::uint32_t(e.name.size()));
        out += e.name;
        put_u8(out, e.dtype);
        put_u32(out, std::uint32_t(e.tensor.ndim()));
        for (std::size_t dim : e.tensor.shape) put_u64(out, dim);
        if (e.dtype == 2) {
            for (double v : e.tensor.data) put_u64(out, std::bit_cast<std::uint64_t>(v));
        } else {
            for (double v : e.tensor.data) {
                const auto b = std::bit_cast<std::uint32_t>(float(v));
                put_u32(out, b);
            }
        }
    }
    put_u32(out, std::uint32_t(ar.metadata.size()));
    out += ar.metadata;
    return out;
}

inline TensorArchive decode_archive(const std::string& buf) {
    using namespace detail;
    ByteReader r(buf);
    CPS_REQUIRE(r.str(4) == "CPTA", "read_archive: bad magic");
    const std::uint32_t version = r.u32();
    CPS_REQUIRE(version == 1, "read_archive: unsupported version ", version);
    const std::uint32_t count = r.u32();
    TensorArchive ar;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        CPS_REQUIRE(name_len <= (1u << 20), "read_archive: absurd name length ", name_len);
        std::string name = r.str(name_len);
        const std::uint8_t dtype = r.u8();
        CPS_REQUIRE(dtype == 1 || dtype == 2, "read_archive: bad dtype ", int(dtype), " for '",
                    name, "'");
        const std::uint32_t ndim = r.u32();
        CPS_REQUIRE(ndim <= 8, "read_archive: absurd rank ", ndim, " for '", name, "'");
        std::vector<std::size_t> shape(ndim);
        std::size_t numel = 1;
        for (std::uint32_t k = 0; k < ndim; ++k) {
            const std::uint64_t dim = r.u64();
            CPS_REQUIRE(dim > 0 && numel <= (std::size_t(1) << 40) / (dim > 0 ? dim : 1),
                        "read_archive: absurd dimensions for '", name, "'");
            shape[k] = std::size_t(dim);
            numel *= shape[k];
        }
        Tensor t(shape);
        if (dtype == 2) {
            for (double& v : t.data) v = std::bit_cast<double>(r.u64());
        } else {
            for (double& v : t.data) v = double(std::bit_cast<float>(r.u32()));
        }
        ar.put(std::move(name), std::move(t), dtype);
    }
    const std::uint32_t meta_len = r.u32();
    ar.metadata = r.str(meta_len);
    CPS_REQUIRE(r.pos == buf.size(), "read_archive: ", buf.size() - r.pos,
                " trailing bytes after metadata");
    return ar;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    CPS_REQUIRE(f != nullptr, "cannot open '", path, "' for writing");
    const std::size_t written = bytes.empty() ? 0 : std::fwrite(bytes.data(), 1, bytes.size(), f);
    const int rc = std::fclose(f);
    CPS_REQUIRE(written == bytes.size() && rc == 0, "short write to '", path, "'");
}

inline std::string read_file_bytes(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    CPS_REQUIRE(f != nullptr, "cannot open '", path, "' for reading");
    std::string buf;
    char tmp[1 << 16];
    std::size_t got;
    while ((got = std::fread(tmp, 1, sizeof tmp, f)) > 0) buf.append(tmp, got);
    const bool bad = std::ferror(f) != 0;
    std::fclose(f);
    CPS_REQUIRE(!bad, "read error on '", path, "'");
    return buf;
}

inline void write_archive(const std::string& path, const TensorArchive& ar) {
    write_file_bytes(path, encode_archive(ar));
}

inline TensorArchive read_archive(const std::string& path) {
    try {
        return decode_archive(read_file_bytes(path));
    } catch (const Error& e) {
        fail("'", path, "': ", e.what());
    }
}

}  // namespace cpsample

#endif
