#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "autoret/error.hpp"
#include "autoret/linalg.hpp"

namespace autoret::io {

// Little-endian binary primitives for the checkpoint and index formats.

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        }
        std::memcpy(&v, bytes, sizeof(T));
    }
    return v;
}

template <typename T>
void write(std::ostream& out, T v) {
    v = to_little(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) {
        throw FormatError("unexpected end of file");
    }
    return to_little(v);
}

inline void write_string(std::ostream& out, const std::string& s) {
    write<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    auto n = read<std::uint64_t>(in);
    if (n > (1ULL << 32)) {
        throw FormatError("string length out of range");
    }
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) {
        throw FormatError("unexpected end of file");
    }
    return s;
}

inline void write_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& what) {
    char got[4];
    in.read(got, 4);
    if (!in || std::memcmp(got, magic, 4) != 0) {
        throw FormatError("not a " + what + " file");
    }
}

/// Writes the coefficients of a float tensor in column-major order.
template <typename Derived>
void write_floats(std::ostream& out, const Eigen::DenseBase<Derived>& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            write<float>(out, static_cast<float>(m(i, j)));
        }
    }
}

template <typename Derived>
void read_floats(std::istream& in, Eigen::DenseBase<Derived>& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            m(i, j) = read<float>(in);
        }
    }
}

} // namespace autoret::io
