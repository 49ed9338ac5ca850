#include "recorr/local_search.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "recorr/kernels.hpp"

namespace recorr {

namespace {

void check_inputs(const Volume& fixed, const Volume& moving, const Volume& field, int r) {
    require(r >= 1 && r % 2 == 1, "local_search: radius must be odd and >= 1, got " + std::to_string(r));
    require(fixed.dims() == moving.dims() && fixed.dims() == field.dims(),
            "local_search: dims differ (" + to_string(fixed.dims()) + ", " + to_string(moving.dims()) + ", " +
                to_string(field.dims()) + ")");
    require(fixed.channels() == moving.channels(), "local_search: feature channel counts differ");
    require(field.channels() == 3, "local_search: field must have 3 channels");
}

} // namespace

ad::Var local_search(ad::Tape& t, ad::Var fixed, ad::Var moving, ad::Var field, int r) {
    check_inputs(t.value(fixed), t.value(moving), t.value(field), r);
    return ad::correlation(t, fixed, ad::warp(t, moving, field), r);
}

CorrelationVolume local_search(const Volume& fixed, const Volume& moving, const DisplacementField& field, int r) {
    check_inputs(fixed, moving, field.volume(), r);
    const Volume warped = warp(moving, field);
    CorrelationVolume out(r * r * r, fixed.dims(), fixed.spacing());
    kernels::correlation_forward(fixed.channels(), fixed.dims(), r, fixed.values(), warped.values(), out.values());
    return out;
}

int search_radius(const CorrelationVolume& corr) {
    const int n = corr.channels();
    int r = static_cast<int>(std::lround(std::cbrt(static_cast<double>(n))));
    require(r * r * r == n && r % 2 == 1, "correlation volume: channel count " + std::to_string(n) + " is not an odd cube");
    return r;
}

DisplacementField soft_argmax(const CorrelationVolume& corr, double temperature) {
    require(temperature > 0.0 && std::isfinite(temperature), "soft_argmax: temperature must be positive");
    const int r = search_radius(corr);
    const int taps = r * r * r;
    const Dims d = corr.dims();
    const std::size_t vox = d.voxels();
    std::vector<std::array<int, 3>> offsets(taps);
    for (int k = 0; k < taps; ++k) offsets[k] = kernels::correlation_offset(r, k);
    DisplacementField out(d);
    Volume& u = out.volume();
    const double* c = corr.data();
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < vox; ++i) {
        double mx = c[i];
        for (int k = 1; k < taps; ++k) mx = std::max(mx, c[k * vox + i]);
        double z = 0.0, ez = 0.0, ey = 0.0, ex = 0.0;
        for (int k = 0; k < taps; ++k) {
            const double w = std::exp((c[k * vox + i] - mx) / temperature);
            z += w;
            ez += w * offsets[k][0];
            ey += w * offsets[k][1];
            ex += w * offsets[k][2];
        }
        u[i] = ez / z;
        u[vox + i] = ey / z;
        u[2 * vox + i] = ex / z;
    }
    return out;
}

} // namespace recorr
