#pragma once

// .vol3 container:
//   16-byte magic "RECORRVOL3" + six NULs
//   u32 C, D, H, W  (little-endian)
//   f32 spacing z, y, x
//   u32 dtype (0 = f32)
//   C*D*H*W f32 values, index ((c*D + z)*H + y)*W + x
// Displacement fields use the same container with C = 3.

#include <filesystem>

#include "recorr/volume.hpp"

namespace recorr {

void write_vol3(const std::filesystem::path& path, const Volume& volume);
Volume read_vol3(const std::filesystem::path& path);

void write_field(const std::filesystem::path& path, const DisplacementField& field);
DisplacementField read_field(const std::filesystem::path& path);

} // namespace recorr
