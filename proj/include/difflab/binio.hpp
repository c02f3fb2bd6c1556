#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace difflab {

// little-endian fixed-width scalar IO for the flat binary file formats

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("binary read: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

inline void put_f64(std::ostream& os, double x) { put_u64(os, std::bit_cast<std::uint64_t>(x)); }

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline void put_doubles(std::ostream& os, const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) put_f64(os, p[i]);
}

inline void get_doubles(std::istream& is, double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) p[i] = get_f64(is);
}

}  // namespace difflab
