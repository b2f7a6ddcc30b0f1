#pragma once

// AGT1 tensor container: magic "AGT1", u8 dtype (0=f32, 1=f64, 2=i64),
// u8 rank, rank little-endian u64 extents, raw little-endian payload.

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "aggrnet/tensor.hpp"

namespace aggrnet {

namespace agt1 {

constexpr char kMagic[4] = {'A', 'G', 'T', '1'};

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1, i64 = 2 };

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() { return Dtype::f32; }
template <>
constexpr Dtype dtype_of<double>() { return Dtype::f64; }
template <>
constexpr Dtype dtype_of<std::int64_t>() { return Dtype::i64; }

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw IntegrityError("AGT1: truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
    return v;
}

template <typename T>
void write_raw(std::ostream& os, const Shape& shape, const T* values) {
    static_assert(sizeof(float) == 4 && sizeof(double) == 8);
    os.write(kMagic, 4);
    std::uint8_t dt = std::uint8_t(dtype_of<T>());
    std::uint8_t rank = std::uint8_t(shape.size());
    os.write(reinterpret_cast<const char*>(&dt), 1);
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (std::size_t e : shape) write_u64_le(os, e);
    // assumes little-endian host, as does the rest of the project
    os.write(reinterpret_cast<const char*>(values), std::streamsize(numel(shape) * sizeof(T)));
    if (!os) throw IntegrityError("AGT1: write failed");
}

template <typename T>
void read_raw(std::istream& is, Shape& shape, std::vector<T>& values) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IntegrityError("AGT1: bad magic");
    std::uint8_t dt = 0, rank = 0;
    is.read(reinterpret_cast<char*>(&dt), 1);
    is.read(reinterpret_cast<char*>(&rank), 1);
    if (!is) throw IntegrityError("AGT1: truncated header");
    if (dt != std::uint8_t(dtype_of<T>()))
        throw IntegrityError("AGT1: dtype code " + std::to_string(dt) + " does not match reader");
    shape.resize(rank);
    for (auto& e : shape) e = read_u64_le(is);
    values.resize(numel(shape));
    is.read(reinterpret_cast<char*>(values.data()), std::streamsize(values.size() * sizeof(T)));
    if (!is) throw IntegrityError("AGT1: truncated payload");
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    write_raw(os, t.shape(), t.data().data());
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
    Shape shape;
    std::vector<T> values;
    read_raw(is, shape, values);
    return Tensor<T>::from_data(std::move(shape), std::move(values));
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for write: " + path);
    write_tensor(os, t);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    return read_tensor<T>(is);
}

}  // namespace agt1

}  // namespace aggrnet
