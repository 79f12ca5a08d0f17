#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "rotocal/activation_batch.hpp"
#include "rotocal/matrix.hpp"

namespace rotocal {

/// Binary tensor container:
///   magic "ROTOCAL1" (8 bytes) | dtype u8 (0 = real32, 1 = real64) |
///   ndim u8 (always 2) | rows u64 LE | cols u64 LE | row-major payload LE.
namespace tensor_io {

inline constexpr char kMagic[8] = {'R', 'O', 'T', 'O', 'C', 'A', 'L', '1'};
inline constexpr std::size_t kHeaderBytes = 26;

namespace detail {

inline void put_u64_le(std::ofstream& out, std::uint64_t v) {
    std::array<unsigned char, 8> bytes{};
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes.data()), 8);
}

inline std::uint64_t get_u64_le(std::ifstream& in) {
    std::array<unsigned char, 8> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

static_assert(std::endian::native == std::endian::little,
              "tensor_io assumes a little-endian host");

}  // namespace detail

inline void write_matrix(const std::string& path, const Matrix& m,
                         OriginDtype dtype = OriginDtype::real64) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("tensor_io: cannot open for writing: " + path);
    out.write(kMagic, 8);
    const unsigned char dt = dtype == OriginDtype::real32 ? 0 : 1;
    const unsigned char ndim = 2;
    out.write(reinterpret_cast<const char*>(&dt), 1);
    out.write(reinterpret_cast<const char*>(&ndim), 1);
    detail::put_u64_le(out, m.rows());
    detail::put_u64_le(out, m.cols());
    if (dtype == OriginDtype::real32) {
        for (double v : m.values()) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
    } else {
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(m.size() * 8));
    }
    if (!out) throw std::runtime_error("tensor_io: write failed: " + path);
}

struct LoadedTensor {
    Matrix matrix;
    OriginDtype dtype;
};

inline LoadedTensor read_matrix(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("tensor_io: cannot open for reading: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error("tensor_io: bad magic in " + path);
    }
    unsigned char dt = 0, ndim = 0;
    in.read(reinterpret_cast<char*>(&dt), 1);
    in.read(reinterpret_cast<char*>(&ndim), 1);
    if (dt > 1) throw std::runtime_error("tensor_io: unknown dtype in " + path);
    if (ndim != 2) throw std::runtime_error("tensor_io: only 2-d tensors supported");
    const std::uint64_t rows = detail::get_u64_le(in);
    const std::uint64_t cols = detail::get_u64_le(in);
    if (!in || rows == 0 || cols == 0 || rows > (1ull << 32) || cols > (1ull << 32)) {
        throw std::runtime_error("tensor_io: implausible dimensions in " + path);
    }

    LoadedTensor out;
    out.dtype = dt == 0 ? OriginDtype::real32 : OriginDtype::real64;
    out.matrix = Matrix(rows, cols);
    if (dt == 0) {
        for (std::size_t i = 0; i < out.matrix.size(); ++i) {
            float f;
            in.read(reinterpret_cast<char*>(&f), 4);
            out.matrix.data()[i] = static_cast<double>(f);
        }
    } else {
        in.read(reinterpret_cast<char*>(out.matrix.data()),
                static_cast<std::streamsize>(out.matrix.size() * 8));
    }
    if (!in) throw std::runtime_error("tensor_io: truncated payload in " + path);
    return out;
}

inline ActivationBatch read_batch(const std::string& path) {
    LoadedTensor t = read_matrix(path);
    ActivationBatch batch;
    batch.tokens = std::move(t.matrix);
    batch.source = BatchSource::file;
    batch.layer_label = path;
    batch.dtype_of_origin = t.dtype;
    batch.validate();
    return batch;
}

}  // namespace tensor_io
}  // namespace rotocal
