#pragma once

// HTK1 tensor container: "HTK1", u8 dtype (0 = float64), u32 ndim, ndim x u64
// dims, then the row-major float64 payload. All integers little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace htnn {

static_assert(std::endian::native == std::endian::little, "HTK1 I/O assumes a little-endian host");

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}
template <typename T>
T get(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw FormatError("truncated HTK1 data");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}
}  // namespace detail

inline std::string encode_htk1(const DenseTensor& t) {
    std::string out = "HTK1";
    detail::put<std::uint8_t>(out, 0);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.order()));
    for (std::size_t n : t.shape()) detail::put<std::uint64_t>(out, n);
    out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
    return out;
}

inline DenseTensor decode_htk1(const std::string& bytes) {
    if (bytes.size() < 9 || bytes.compare(0, 4, "HTK1") != 0) throw FormatError("missing HTK1 magic");
    std::size_t pos = 4;
    const auto dtype = detail::get<std::uint8_t>(bytes, pos);
    if (dtype != 0) throw FormatError("unsupported HTK1 dtype code " + std::to_string(dtype));
    const auto ndim = detail::get<std::uint32_t>(bytes, pos);
    if (ndim == 0) throw FormatError("HTK1 tensor with zero dimensions");
    Shape shape;
    for (std::uint32_t k = 0; k < ndim; ++k) shape.push_back(detail::get<std::uint64_t>(bytes, pos));
    for (std::size_t n : shape)
        if (n == 0) throw FormatError("HTK1 tensor with a zero-length mode");
    const std::size_t count = shape_product(shape);
    if (bytes.size() - pos != count * sizeof(double)) {
        throw FormatError("HTK1 payload holds " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(count * sizeof(double)));
    }
    std::vector<double> data(count);
    std::memcpy(data.data(), bytes.data() + pos, count * sizeof(double));
    return DenseTensor(std::move(shape), std::move(data));
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::ios_base::failure("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::ios_base::failure("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::ios_base::failure("short write to '" + path + "'");
}

inline DenseTensor load_htk1(const std::string& path) { return decode_htk1(read_file(path)); }
inline void save_htk1(const std::string& path, const DenseTensor& t) { write_file(path, encode_htk1(t)); }

}  // namespace htnn
