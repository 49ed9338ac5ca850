#pragma once

// Hot loops of the engine. Two implementations share one interface:
//
//   recorr::kernels          OpenMP-parallel, cache-friendly loop orders
//   recorr::kernels::serial  direct textbook loops, kept as the reference
//
// Every parallel kernel writes each output element from exactly one thread and
// sums in a fixed order, so results do not depend on the thread count.
// Gradient outputs accumulate (+=) into the caller's buffers.

#include <array>
#include <span>

#include "recorr/volume.hpp"

namespace recorr::kernels {

struct ConvShape {
    int in_channels = 1;
    int out_channels = 1;
    Dims in{};
    Dims out{};
    std::array<int, 3> kernel{3, 3, 3}; // (kd, kh, kw)
    std::array<int, 3> pad{1, 1, 1};
    int stride = 1;

    std::size_t weight_count() const {
        return static_cast<std::size_t>(out_channels) * in_channels * kernel[0] * kernel[1] * kernel[2];
    }
};

// "same" zero padding (k/2 per axis); output = floor((n + 2p - k)/s) + 1.
ConvShape make_conv_shape(int in_channels, int out_channels, Dims in, std::array<int, 3> kernel, int stride);

// Weight layout: [out][in][kd][kh][kw]. Bias may be empty.
void conv3d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
void conv3d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in);
void conv3d_backward_weight(const ConvShape& s, std::span<const double> grad_out, std::span<const double> in,
                            std::span<double> grad_weight, std::span<double> grad_bias);

// out[c](p) = trilinear(image[c], p + u(p)), border clamp. field is 3 x dims.
void warp_forward(int channels, Dims dims, std::span<const double> image, std::span<const double> field,
                  std::span<double> out);
// Either gradient span may be empty to skip it.
void warp_backward(int channels, Dims dims, std::span<const double> image, std::span<const double> field,
                   std::span<const double> grad_out, std::span<double> grad_image, std::span<double> grad_field);

// Channel k of out holds (1/C) <fixed(p), moving(p + o_k)>, zero outside the grid.
// Offsets o_k run lexicographically over (dz, dy, dx) in [-r/2, r/2]^3.
void correlation_forward(int channels, Dims dims, int r, std::span<const double> fixed,
                         std::span<const double> moving, std::span<double> out);
void correlation_backward(int channels, Dims dims, int r, std::span<const double> fixed,
                          std::span<const double> moving, std::span<const double> grad_out,
                          std::span<double> grad_fixed, std::span<double> grad_moving);

std::array<int, 3> correlation_offset(int r, int k);

namespace serial {

void conv3d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
void conv3d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in);
void conv3d_backward_weight(const ConvShape& s, std::span<const double> grad_out, std::span<const double> in,
                            std::span<double> grad_weight, std::span<double> grad_bias);
void warp_forward(int channels, Dims dims, std::span<const double> image, std::span<const double> field,
                  std::span<double> out);
void warp_backward(int channels, Dims dims, std::span<const double> image, std::span<const double> field,
                   std::span<const double> grad_out, std::span<double> grad_image, std::span<double> grad_field);
void correlation_forward(int channels, Dims dims, int r, std::span<const double> fixed,
                         std::span<const double> moving, std::span<double> out);
void correlation_backward(int channels, Dims dims, int r, std::span<const double> fixed,
                          std::span<const double> moving, std::span<const double> grad_out,
                          std::span<double> grad_fixed, std::span<double> grad_moving);

} // namespace serial

// Trilinear sampling helpers shared by both kernel families and volume-core.
struct AxisSample {
    int i0 = 0;
    int i1 = 0;
    double frac = 0.0;
    double active = 0.0; // d(clamped)/d(coord): 0 when clamped, right-continuous
};

inline AxisSample axis_sample(double c, int n) {
    AxisSample a;
    if (!(c >= 0.0)) { // also catches NaN
        a.active = 0.0;
        c = 0.0;
    } else if (c >= n - 1) {
        a.active = 0.0;
        c = n - 1;
    } else {
        a.active = 1.0;
    }
    int f = static_cast<int>(c);
    if (f > n - 1) f = n - 1;
    a.i0 = f;
    a.i1 = f + 1 < n ? f + 1 : n - 1;
    a.frac = c - f;
    return a;
}

} // namespace recorr::kernels

namespace recorr::kernels {

// Half-voxel aligned trilinear doubling (fine p samples coarse p/2 - 1/4, border clamp).
void upsample2_forward(int channels, Dims coarse, std::span<const double> in, std::span<double> out);
void upsample2_backward(int channels, Dims coarse, std::span<const double> grad_out, std::span<double> grad_in);

} // namespace recorr::kernels
