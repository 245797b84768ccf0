#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "wlas/ndarray.hpp"

namespace wlas {

// Portable binary array container: magic, version, dtype, dims, then raw
// little-endian scalars. dtype u8 stores values quantized from [0,1].

enum class ArrayDtype : std::uint32_t { F32 = 0, F64 = 1, U8 = 2 };

namespace detail {

inline void write_bytes(std::ofstream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::ifstream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    check(is.good(), "array_io: truncated file");
}

constexpr char kArrayMagic[8] = {'W', 'L', 'A', 'S', 'A', 'R', 'R', '\0'};

}  // namespace detail

template <typename Real>
void save_array(const std::string& path, const NDArray<Real>& a, ArrayDtype dtype) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    check(os.good(), "save_array: cannot open " + path);
    detail::write_bytes(os, detail::kArrayMagic, 8);
    const std::uint32_t version = 1;
    const auto dt = static_cast<std::uint32_t>(dtype);
    const std::uint32_t ndim = static_cast<std::uint32_t>(a.rank());
    detail::write_bytes(os, &version, 4);
    detail::write_bytes(os, &dt, 4);
    detail::write_bytes(os, &ndim, 4);
    for (int i = 0; i < a.rank(); ++i) {
        const std::uint64_t d = static_cast<std::uint64_t>(a.dim(i));
        detail::write_bytes(os, &d, 8);
    }
    switch (dtype) {
        case ArrayDtype::F32: {
            std::vector<float> buf(static_cast<std::size_t>(a.size()));
            for (std::int64_t i = 0; i < a.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(a[i]);
            detail::write_bytes(os, buf.data(), buf.size() * 4);
            break;
        }
        case ArrayDtype::F64: {
            std::vector<double> buf(static_cast<std::size_t>(a.size()));
            for (std::int64_t i = 0; i < a.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<double>(a[i]);
            detail::write_bytes(os, buf.data(), buf.size() * 8);
            break;
        }
        case ArrayDtype::U8: {
            std::vector<std::uint8_t> buf(static_cast<std::size_t>(a.size()));
            for (std::int64_t i = 0; i < a.size(); ++i) {
                double v = static_cast<double>(a[i]);
                v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
                buf[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
            }
            detail::write_bytes(os, buf.data(), buf.size());
            break;
        }
    }
    check(os.good(), "save_array: write failed for " + path);
}

template <typename Real>
NDArray<Real> load_array(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "load_array: cannot open " + path);
    char magic[8];
    detail::read_bytes(is, magic, 8);
    check(std::memcmp(magic, detail::kArrayMagic, 8) == 0, "load_array: bad magic in " + path);
    std::uint32_t version = 0, dt = 0, ndim = 0;
    detail::read_bytes(is, &version, 4);
    detail::read_bytes(is, &dt, 4);
    detail::read_bytes(is, &ndim, 4);
    check(version == 1, "load_array: unsupported version in " + path);
    check(ndim >= 1 && ndim <= 8, "load_array: implausible rank in " + path);
    std::vector<int> shape(ndim);
    std::int64_t total = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        std::uint64_t d = 0;
        detail::read_bytes(is, &d, 8);
        shape[i] = static_cast<int>(d);
        total *= shape[i];
    }
    NDArray<Real> out(shape);
    switch (static_cast<ArrayDtype>(dt)) {
        case ArrayDtype::F32: {
            std::vector<float> buf(static_cast<std::size_t>(total));
            detail::read_bytes(is, buf.data(), buf.size() * 4);
            for (std::int64_t i = 0; i < total; ++i) out[i] = static_cast<Real>(buf[static_cast<std::size_t>(i)]);
            break;
        }
        case ArrayDtype::F64: {
            std::vector<double> buf(static_cast<std::size_t>(total));
            detail::read_bytes(is, buf.data(), buf.size() * 8);
            for (std::int64_t i = 0; i < total; ++i) out[i] = static_cast<Real>(buf[static_cast<std::size_t>(i)]);
            break;
        }
        case ArrayDtype::U8: {
            std::vector<std::uint8_t> buf(static_cast<std::size_t>(total));
            detail::read_bytes(is, buf.data(), buf.size());
            for (std::int64_t i = 0; i < total; ++i)
                out[i] = static_cast<Real>(buf[static_cast<std::size_t>(i)] / 255.0);
            break;
        }
        default:
            fail("load_array: unknown dtype in " + path);
    }
    return out;
}

// Binary PGM (P5), row-normalized to the full gray range — used for
// attention alignment figures.
template <typename Real>
void save_pgm(const std::string& path, const NDArray<Real>& m) {
    check(m.rank() == 2, "save_pgm: expected a rank-2 array");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    check(os.good(), "save_pgm: cannot open " + path);
    os << "P5\n" << m.dim(1) << " " << m.dim(0) << "\n255\n";
    double mx = 0.0;
    for (std::int64_t i = 0; i < m.size(); ++i) mx = std::max(mx, static_cast<double>(m[i]));
    if (mx <= 0.0) mx = 1.0;
    std::vector<std::uint8_t> row(static_cast<std::size_t>(m.dim(1)));
    for (int r = 0; r < m.dim(0); ++r) {
        for (int c = 0; c < m.dim(1); ++c) {
            const double v = static_cast<double>(m.at(r, c)) / mx;
            row[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(v * 255.0 + 0.5);
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    check(os.good(), "save_pgm: write failed for " + path);
}

inline std::uint64_t file_checksum(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "file_checksum: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    return h;
}

}  // namespace wlas
