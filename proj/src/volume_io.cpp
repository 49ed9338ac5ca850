#include "recorr/volume_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "recorr/binary.hpp"

namespace recorr {

namespace {

constexpr std::array<char, 16> kMagic = {'R', 'E', 'C', 'O', 'R', 'R', 'V', 'O', 'L', '3', 0, 0, 0, 0, 0, 0};
constexpr std::uint32_t kDtypeF32 = 0;

} // namespace

void write_vol3(const std::filesystem::path& path, const Volume& volume) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os.write(kMagic.data(), kMagic.size());
    binary::put_u32(os, static_cast<std::uint32_t>(volume.channels()));
    binary::put_u32(os, static_cast<std::uint32_t>(volume.dims().d));
    binary::put_u32(os, static_cast<std::uint32_t>(volume.dims().h));
    binary::put_u32(os, static_cast<std::uint32_t>(volume.dims().w));
    for (double s : volume.spacing()) binary::put_f32(os, static_cast<float>(s));
    binary::put_u32(os, kDtypeF32);
    binary::put_f32_array(os, volume.values());
    if (!os) throw DataError("write failed for " + path.string());
}

Volume read_vol3(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    std::array<char, 16> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kMagic) throw DataError(path.string() + ": not a .vol3 file (bad magic)");
    const std::uint32_t c = binary::get_u32(is), d = binary::get_u32(is), h = binary::get_u32(is),
                        w = binary::get_u32(is);
    Spacing spacing{};
    for (double& s : spacing) s = binary::get_f32(is);
    const std::uint32_t dtype = binary::get_u32(is);
    if (!is) throw DataError(path.string() + ": truncated header");
    if (dtype != kDtypeF32) throw DataError(path.string() + ": unsupported dtype code " + std::to_string(dtype));
    if (c == 0 || d == 0 || h == 0 || w == 0) throw DataError(path.string() + ": zero extent in header");
    for (double s : spacing)
        if (!(s > 0.0) || !std::isfinite(s)) throw DataError(path.string() + ": non-positive spacing");
    const std::size_t n = static_cast<std::size_t>(c) * d * h * w;
    std::vector<double> values = binary::get_f32_array(is, n);
    if (!is) throw DataError(path.string() + ": truncated payload");
    for (double v : values)
        if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite value");
    return Volume(static_cast<int>(c), Dims{static_cast<int>(d), static_cast<int>(h), static_cast<int>(w)},
                  std::move(values), spacing);
}

void write_field(const std::filesystem::path& path, const DisplacementField& field) {
    write_vol3(path, field.volume());
}

DisplacementField read_field(const std::filesystem::path& path) {
    Volume v = read_vol3(path);
    if (v.channels() != 3) throw DataError(path.string() + ": displacement field must have C = 3");
    return DisplacementField(std::move(v));
}

} // namespace recorr
