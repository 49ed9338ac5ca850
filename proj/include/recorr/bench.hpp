#pragma once

#include <vector>

#include "json.hpp"
#include "recorr/volume.hpp"

namespace recorr {

struct BenchOptions {
    std::vector<int> radii{1, 3, 5};
    int dims = 32;     // cube side
    int channels = 16;
    int repeats = 5;   // best-of
    bool serial = true; // also time the serial reference kernels
    std::uint64_t seed = 0;
};

// Best-of-`repeats` wall times in milliseconds for correlation (per radius),
// warp and a 3^3 conv, OpenMP and serial, plus the r^3 scaling ratios.
nlohmann::json run_bench(const BenchOptions& opt);

} // namespace recorr
