#pragma once

// Little-endian scalar I/O shared by the .vol3 and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

namespace recorr::binary {

static_assert(std::endian::native == std::endian::little, "big-endian hosts need byte swapping here");

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline void put_f32(std::ostream& os, float v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline void put_f32_array(std::ostream& os, std::span<const double> values) {
    std::vector<float> tmp(values.begin(), values.end());
    os.write(reinterpret_cast<const char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * 4));
}

inline std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

inline float get_f32(std::istream& is) {
    float v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

inline std::vector<double> get_f32_array(std::istream& is, std::size_t n) {
    std::vector<float> tmp(n);
    is.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(n * 4));
    return {tmp.begin(), tmp.end()};
}

} // namespace recorr::binary
