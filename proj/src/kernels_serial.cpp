// Reference kernels: direct per-output-element formulas, no blocking, no
// threading. Slow on purpose; they exist so the parallel kernels can be
// checked against something obviously correct.

#include "recorr/kernels.hpp"

namespace recorr::kernels::serial {

namespace {

std::size_t widx(const ConvShape& s, int co, int ci, int a, int b, int c) {
    return (((static_cast<std::size_t>(co) * s.in_channels + ci) * s.kernel[0] + a) * s.kernel[1] + b) * s.kernel[2] + c;
}

std::size_t vidx(Dims d, int c, int z, int y, int x) {
    return ((static_cast<std::size_t>(c) * d.d + z) * d.h + y) * d.w + x;
}

bool inside(Dims d, int z, int y, int x) { return z >= 0 && z < d.d && y >= 0 && y < d.h && x >= 0 && x < d.w; }

} // namespace

void conv3d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
    for (int co = 0; co < s.out_channels; ++co)
        for (int z = 0; z < s.out.d; ++z)
            for (int y = 0; y < s.out.h; ++y)
                for (int x = 0; x < s.out.w; ++x) {
                    double acc = bias.empty() ? 0.0 : bias[co];
                    for (int ci = 0; ci < s.in_channels; ++ci)
                        for (int a = 0; a < s.kernel[0]; ++a)
                            for (int b = 0; b < s.kernel[1]; ++b)
                                for (int c = 0; c < s.kernel[2]; ++c) {
                                    const int zi = z * s.stride + a - s.pad[0];
                                    const int yi = y * s.stride + b - s.pad[1];
                                    const int xi = x * s.stride + c - s.pad[2];
                                    if (!inside(s.in, zi, yi, xi)) continue;
                                    acc += weight[widx(s, co, ci, a, b, c)] * in[vidx(s.in, ci, zi, yi, xi)];
                                }
                    out[vidx(s.out, co, z, y, x)] = acc;
                }
}

void conv3d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in) {
    for (int co = 0; co < s.out_channels; ++co)
        for (int z = 0; z < s.out.d; ++z)
            for (int y = 0; y < s.out.h; ++y)
                for (int x = 0; x < s.out.w; ++x) {
                    const double g = grad_out[vidx(s.out, co, z, y, x)];
                    for (int ci = 0; ci < s.in_channels; ++ci)
                        for (int a = 0; a < s.kernel[0]; ++a)
                            for (int b = 0; b < s.kernel[1]; ++b)
                                for (int c = 0; c < s.kernel[2]; ++c) {
                                    const int zi = z * s.stride + a - s.pad[0];
                                    const int yi = y * s.stride + b - s.pad[1];
                                    const int xi = x * s.stride + c - s.pad[2];
                                    if (!inside(s.in, zi, yi, xi)) continue;
                                    grad_in[vidx(s.in, ci, zi, yi, xi)] += g * weight[widx(s, co, ci, a, b, c)];
                                }
                }
}

void conv3d_backward_weight(const ConvShape& s, std::span<const double> grad_out, std::span<const double> in,
                            std::span<double> grad_weight, std::span<double> grad_bias) {
    for (int co = 0; co < s.out_channels; ++co)
        for (int z = 0; z < s.out.d; ++z)
            for (int y = 0; y < s.out.h; ++y)
                for (int x = 0; x < s.out.w; ++x) {
                    const double g = grad_out[vidx(s.out, co, z, y, x)];
                    if (!grad_bias.empty()) grad_bias[co] += g;
                    for (int ci = 0; ci < s.in_channels; ++ci)
                        for (int a = 0; a < s.kernel[0]; ++a)
                            for (int b = 0; b < s.kernel[1]; ++b)
                                for (int c = 0; c < s.kernel[2]; ++c) {
                                    const int zi = z * s.stride + a - s.pad[0];
                                    const int yi = y * s.stride + b - s.pad[1];
                                    const int xi = x * s.stride + c - s.pad[2];
                                    if (!inside(s.in, zi, yi, xi)) continue;
                                    grad_weight[widx(s, co, ci, a, b, c)] += g * in[vidx(s.in, ci, zi, yi, xi)];
                                }
                }
}

namespace {

// Value and partial derivatives of the trilinear interpolant of one channel.
struct Sample {
    double value = 0, dz = 0, dy = 0, dx = 0;
    AxisSample az, ay, ax;
};

Sample sample(const double* img, Dims d, double z, double y, double x) {
    Sample s;
    s.az = axis_sample(z, d.d);
    s.ay = axis_sample(y, d.h);
    s.ax = axis_sample(x, d.w);
    const int zs[2] = {s.az.i0, s.az.i1}, ys[2] = {s.ay.i0, s.ay.i1}, xs[2] = {s.ax.i0, s.ax.i1};
    const double wz[2] = {1 - s.az.frac, s.az.frac}, wy[2] = {1 - s.ay.frac, s.ay.frac},
                 wx[2] = {1 - s.ax.frac, s.ax.frac};
    const double sz[2] = {-1, 1};
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) {
                const double v = img[(static_cast<std::size_t>(zs[a]) * d.h + ys[b]) * d.w + xs[c]];
                s.value += wz[a] * wy[b] * wx[c] * v;
                s.dz += sz[a] * wy[b] * wx[c] * v;
                s.dy += wz[a] * sz[b] * wx[c] * v;
                s.dx += wz[a] * wy[b] * sz[c] * v;
            }
    s.dz *= s.az.active;
    s.dy *= s.ay.active;
    s.dx *= s.ax.active;
    return s;
}

} // namespace

void warp_forward(int channels, Dims dims, std::span<const double> image, std::span<const double> field,
                  std::span<double> out) {
    const std::size_t vox = dims.voxels();
    for (int c = 0; c < channels; ++c)
        for (int z = 0; z < dims.d; ++z)
            for (int y = 0; y < dims.h; ++y)
                for (int x = 0; x < dims.w; ++x) {
                    const std::size_t i = vidx(dims, 0, z, y, x);
                    out[c * vox + i] =
                        sample(image.data() + c * vox, dims, z + field[i], y + field[vox + i], x + field[2 * vox + i])
                            .value;
                }
}

void warp_backward(int channels, Dims dims, std::span<const double> image, std::span<const double> field,
                   std::span<const double> grad_out, std::span<double> grad_image, std::span<double> grad_field) {
    const std::size_t vox = dims.voxels();
    for (int c = 0; c < channels; ++c)
        for (int z = 0; z < dims.d; ++z)
            for (int y = 0; y < dims.h; ++y)
                for (int x = 0; x < dims.w; ++x) {
                    const std::size_t i = vidx(dims, 0, z, y, x);
                    const double g = grad_out[c * vox + i];
                    const Sample s =
                        sample(image.data() + c * vox, dims, z + field[i], y + field[vox + i], x + field[2 * vox + i]);
                    if (!grad_field.empty()) {
                        grad_field[i] += g * s.dz;
                        grad_field[vox + i] += g * s.dy;
                        grad_field[2 * vox + i] += g * s.dx;
                    }
                    if (!grad_image.empty()) {
                        const int zs[2] = {s.az.i0, s.az.i1}, ys[2] = {s.ay.i0, s.ay.i1}, xs[2] = {s.ax.i0, s.ax.i1};
                        const double wz[2] = {1 - s.az.frac, s.az.frac}, wy[2] = {1 - s.ay.frac, s.ay.frac},
                                     wx[2] = {1 - s.ax.frac, s.ax.frac};
                        for (int a = 0; a < 2; ++a)
                            for (int b = 0; b < 2; ++b)
                                for (int cc = 0; cc < 2; ++cc)
                                    grad_image[vidx(dims, c, zs[a], ys[b], xs[cc])] += g * wz[a] * wy[b] * wx[cc];
                    }
                }
}

void correlation_forward(int channels, Dims dims, int r, std::span<const double> fixed,
                         std::span<const double> moving, std::span<double> out) {
    const int taps = r * r * r;
    for (int k = 0; k < taps; ++k) {
        const auto o = correlation_offset(r, k);
        for (int z = 0; z < dims.d; ++z)
            for (int y = 0; y < dims.h; ++y)
                for (int x = 0; x < dims.w; ++x) {
                    double acc = 0.0;
                    const int zz = z + o[0], yy = y + o[1], xx = x + o[2];
                    if (inside(dims, zz, yy, xx))
                        for (int c = 0; c < channels; ++c)
                            acc += fixed[vidx(dims, c, z, y, x)] * moving[vidx(dims, c, zz, yy, xx)];
                    out[vidx(dims, k, z, y, x)] = acc / channels;
                }
    }
}

void correlation_backward(int channels, Dims dims, int r, std::span<const double> fixed,
                          std::span<const double> moving, std::span<const double> grad_out,
                          std::span<double> grad_fixed, std::span<double> grad_moving) {
    const int taps = r * r * r;
    for (int k = 0; k < taps; ++k) {
        const auto o = correlation_offset(r, k);
        for (int z = 0; z < dims.d; ++z)
            for (int y = 0; y < dims.h; ++y)
                for (int x = 0; x < dims.w; ++x) {
                    const int zz = z + o[0], yy = y + o[1], xx = x + o[2];
                    if (!inside(dims, zz, yy, xx)) continue;
                    const double g = grad_out[vidx(dims, k, z, y, x)] / channels;
                    for (int c = 0; c < channels; ++c) {
                        if (!grad_fixed.empty()) grad_fixed[vidx(dims, c, z, y, x)] += g * moving[vidx(dims, c, zz, yy, xx)];
                        if (!grad_moving.empty()) grad_moving[vidx(dims, c, zz, yy, xx)] += g * fixed[vidx(dims, c, z, y, x)];
                    }
                }
    }
}

} // namespace recorr::kernels::serial
