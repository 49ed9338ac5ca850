#include "recorr/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace recorr::kernels {

ConvShape make_conv_shape(int in_channels, int out_channels, Dims in, std::array<int, 3> kernel, int stride) {
    require(in_channels > 0 && out_channels > 0, "conv3d: channel counts must be positive");
    require(stride == 1 || stride == 2, "conv3d: stride must be 1 or 2");
    ConvShape s;
    s.in_channels = in_channels;
    s.out_channels = out_channels;
    s.in = in;
    s.kernel = kernel;
    s.stride = stride;
    for (int a = 0; a < 3; ++a) {
        require(kernel[a] >= 1 && kernel[a] % 2 == 1, "conv3d: kernel extents must be odd");
        s.pad[a] = kernel[a] / 2;
    }
    auto out_extent = [&](int n, int a) { return (n + 2 * s.pad[a] - kernel[a]) / stride + 1; };
    s.out = {out_extent(in.d, 0), out_extent(in.h, 1), out_extent(in.w, 2)};
    require(s.out.d >= 1 && s.out.h >= 1 && s.out.w >= 1, "conv3d: empty output");
    return s;
}

namespace {

// Zero-padded copy of a multi-channel volume, used by the stride-1 path so the
// whole kernel tap becomes one contiguous axpy over a flattened index range.
// Tail room so vector tiles may read a few elements past the last channel.
constexpr std::size_t kSlack = 64;

struct Padded {
    int dp, hp, wp;
    std::size_t plane, chan;
    std::vector<double> buf;
};

Padded pad_input(std::span<const double> in, int channels, Dims dims, std::array<int, 3> pad) {
    Padded p;
    p.dp = dims.d + 2 * pad[0];
    p.hp = dims.h + 2 * pad[1];
    p.wp = dims.w + 2 * pad[2];
    p.plane = static_cast<std::size_t>(p.hp) * p.wp;
    // one extra plane of slack so reads past the last valid row stay in bounds
    p.chan = p.plane * (p.dp + 1);
    p.buf.assign(p.chan * channels + kSlack, 0.0);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        for (int z = 0; z < dims.d; ++z) {
            for (int y = 0; y < dims.h; ++y) {
                const double* src = in.data() + ((static_cast<std::size_t>(c) * dims.d + z) * dims.h + y) * dims.w;
                double* dst = p.buf.data() + c * p.chan + (z + pad[0]) * p.plane + (y + pad[1]) * p.wp + pad[2];
                std::memcpy(dst, src, sizeof(double) * dims.w);
            }
        }
    }
    return p;
}

// Output rows live in the padded row pitch: flat index t = z*plane + y*wp + x.
std::size_t flat_extent(const Padded& p, Dims out) { return out.d * p.plane; }

} // namespace

namespace {

// Stride-1 kernels run as a GEMM over implicit columns: the padded input is
// flattened at the padded row pitch, so tap k of input channel ci is the
// contiguous range starting at offs[ci*taps + k]. Tiles of kCo output
// channels by kT positions stay in registers across the whole reduction.
constexpr int kCo = 8;
constexpr int kT = 16;
constexpr int kLanes = 8;
typedef double Lanes __attribute__((vector_size(kLanes * sizeof(double))));

std::vector<std::size_t> tap_offsets(const ConvShape& s, const Padded& p) {
    const auto [kd, kh, kw] = s.kernel;
    std::vector<std::size_t> offs;
    offs.reserve(static_cast<std::size_t>(s.in_channels) * kd * kh * kw);
    for (int ci = 0; ci < s.in_channels; ++ci)
        for (int a = 0; a < kd; ++a)
            for (int b = 0; b < kh; ++b)
                for (int c = 0; c < kw; ++c) offs.push_back(ci * p.chan + a * p.plane + b * p.wp + c);
    return offs;
}

// out[co][t] over the padded pitch. `p.buf` must hold kT elements of slack
// past the last tap read.
void gemm_forward(const Padded& p, const std::vector<std::size_t>& offs, int out_channels,
                  std::span<const double> weight, std::span<const double> bias, std::size_t n, Dims out_dims,
                  std::span<double> out) {
    const std::size_t kk = offs.size();
    const int blocks = (out_channels + kCo - 1) / kCo;
    const std::size_t out_vox = out_dims.voxels();
    const std::size_t nt = (n + kT - 1) / kT * kT;
#pragma omp parallel
    {
        std::vector<double> wt(kk * kCo);
        std::vector<double> acc(nt * kCo);
#pragma omp for schedule(static)
        for (int blk = 0; blk < blocks; ++blk) {
            const int co0 = blk * kCo;
            const int nco = std::min(kCo, out_channels - co0);
            std::fill(wt.begin(), wt.end(), 0.0);
            for (int q = 0; q < nco; ++q)
                for (std::size_t k = 0; k < kk; ++k) wt[k * kCo + q] = weight[(co0 + q) * kk + k];
            double b0[kCo] = {};
            for (int q = 0; q < nco; ++q) b0[q] = bias.empty() ? 0.0 : bias[co0 + q];
            const double* base = p.buf.data();
            for (std::size_t t0 = 0; t0 < nt; t0 += kT) {
                Lanes r[kCo][kT / kLanes];
                for (int q = 0; q < kCo; ++q)
                    for (int j = 0; j < kT / kLanes; ++j) r[q][j] = Lanes{} + b0[q];
                for (std::size_t k = 0; k < kk; ++k) {
                    const double* src = base + offs[k] + t0;
                    Lanes x[kT / kLanes];
                    for (int j = 0; j < kT / kLanes; ++j) std::memcpy(&x[j], src + j * kLanes, sizeof(Lanes));
                    const double* w = wt.data() + k * kCo;
                    for (int q = 0; q < kCo; ++q)
                        for (int j = 0; j < kT / kLanes; ++j) r[q][j] += w[q] * x[j];
                }
                for (int q = 0; q < kCo; ++q)
                    for (int j = 0; j < kT / kLanes; ++j)
                        std::memcpy(acc.data() + q * nt + t0 + j * kLanes, &r[q][j], sizeof(Lanes));
            }
            for (int q = 0; q < nco; ++q) {
                double* o = out.data() + (co0 + q) * out_vox;
                for (int z = 0; z < out_dims.d; ++z)
                    for (int y = 0; y < out_dims.h; ++y)
                        std::memcpy(o + (static_cast<std::size_t>(z) * out_dims.h + y) * out_dims.w,
                                    acc.data() + q * nt + z * p.plane + y * p.wp, sizeof(double) * out_dims.w);
            }
        }
    }
}

// Explicit columns for strided convs: row (ci*taps + k) holds tap k of
// channel ci at every output voxel, zero where the tap falls in the padding.
Padded im2col(const ConvShape& s, std::span<const double> in) {
    const auto [kd, kh, kw] = s.kernel;
    const std::size_t n = s.out.voxels(), in_vox = s.in.voxels();
    const int rows = s.in_channels * kd * kh * kw;
    Padded p;
    p.dp = s.out.d;
    p.hp = s.out.h;
    p.wp = s.out.w;
    p.plane = static_cast<std::size_t>(s.out.h) * s.out.w;
    p.chan = n;
    p.buf.assign(n * rows + kSlack, 0.0);
#pragma omp parallel for schedule(static)
    for (int row = 0; row < rows; ++row) {
        const int ci = row / (kd * kh * kw);
        const int a = row / (kh * kw) % kd, b = row / kw % kh, c = row % kw;
        const double* src = in.data() + ci * in_vox;
        double* dst = p.buf.data() + row * n;
        for (int z = 0; z < s.out.d; ++z) {
            const int zi = z * s.stride + a - s.pad[0];
            if (zi < 0 || zi >= s.in.d) continue;
            for (int y = 0; y < s.out.h; ++y) {
                const int yi = y * s.stride + b - s.pad[1];
                if (yi < 0 || yi >= s.in.h) continue;
                const double* irow = src + (static_cast<std::size_t>(zi) * s.in.h + yi) * s.in.w;
                double* orow = dst + (static_cast<std::size_t>(z) * s.out.h + y) * s.out.w;
                for (int x = 0; x < s.out.w; ++x) {
                    const int xi = x * s.stride + c - s.pad[2];
                    if (xi >= 0 && xi < s.in.w) orow[x] = irow[xi];
                }
            }
        }
    }
    return p;
}

std::vector<std::size_t> row_offsets(std::size_t rows, std::size_t n) {
    std::vector<std::size_t> offs(rows);
    for (std::size_t r = 0; r < rows; ++r) offs[r] = r * n;
    return offs;
}

// grad_weight[co][k] += sum_t g[co][t] * src(k)[t], g given compact (out dims)
// and re-laid at the pitch of `p`.
void gemm_weight(const Padded& p, const std::vector<std::size_t>& offs, int out_channels, Dims out_dims,
                 std::size_t n, std::span<const double> grad_out, std::span<double> grad_weight) {
    const std::size_t kk = offs.size();
    const std::size_t out_vox = out_dims.voxels();
    constexpr int kW = 4; // taps per tile
    constexpr int kV = 8; // lanes
    const std::size_t nt = (n + kV - 1) / kV * kV;
    const int co_blocks = (out_channels + kCo - 1) / kCo;
    std::vector<double> gpad(static_cast<std::size_t>(co_blocks) * kCo * nt, 0.0);
    for (int co = 0; co < out_channels; ++co)
        for (int z = 0; z < out_dims.d; ++z)
            for (int y = 0; y < out_dims.h; ++y)
                std::memcpy(gpad.data() + co * nt + z * p.plane + y * p.wp,
                            grad_out.data() + co * out_vox + (static_cast<std::size_t>(z) * out_dims.h + y) * out_dims.w,
                            sizeof(double) * out_dims.w);
    const std::size_t k_blocks = (kk + kW - 1) / kW;
    const std::size_t tiles = static_cast<std::size_t>(co_blocks) * k_blocks;
#pragma omp parallel for schedule(static)
    for (std::size_t tile = 0; tile < tiles; ++tile) {
        const int co0 = static_cast<int>(tile / k_blocks) * kCo;
        const std::size_t k0 = tile % k_blocks * kW;
        const int nk = static_cast<int>(std::min<std::size_t>(kW, kk - k0));
        const double* src[kW];
        for (int r = 0; r < kW; ++r) src[r] = p.buf.data() + offs[k0 + std::min(r, nk - 1)];
        const double* g = gpad.data() + co0 * nt;
        double acc[kCo][kW][kV] = {};
        for (std::size_t t = 0; t < nt; t += kV)
            for (int q = 0; q < kCo; ++q)
                for (int r = 0; r < kW; ++r)
                    for (int j = 0; j < kV; ++j) acc[q][r][j] += g[q * nt + t + j] * src[r][t + j];
        for (int q = 0; q < kCo && co0 + q < out_channels; ++q)
            for (int r = 0; r < nk; ++r) {
                double v = 0.0;
                for (int j = 0; j < kV; ++j) v += acc[q][r][j];
                grad_weight[(co0 + q) * kk + k0 + r] += v;
            }
    }
}

} // namespace

void conv3d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
    if (s.stride != 1) {
        const Padded col = im2col(s, in);
        const std::size_t rows = weight.size() / s.out_channels;
        gemm_forward(col, row_offsets(rows, col.chan), s.out_channels, weight, bias, col.chan, s.out, out);
        return;
    }
    const Padded p = pad_input(in, s.in_channels, s.in, s.pad);
    gemm_forward(p, tap_offsets(s, p), s.out_channels, weight, bias, flat_extent(p, s.out), s.out, out);
}

void conv3d_backward_input(const ConvShape& s, std::span<const double> grad_out, std::span<const double> weight,
                           std::span<double> grad_in) {
    const auto [kd, kh, kw] = s.kernel;
    const std::size_t taps = static_cast<std::size_t>(kd) * kh * kw;
    if (s.stride != 1) {
        // column gradients W^T g, then scattered back (col2im)
        const std::size_t rows = static_cast<std::size_t>(s.in_channels) * taps, n = s.out.voxels();
        std::vector<double> wt(weight.size());
        for (int co = 0; co < s.out_channels; ++co)
            for (std::size_t r = 0; r < rows; ++r) wt[r * s.out_channels + co] = weight[co * rows + r];
        Padded g;
        g.dp = s.out.d;
        g.hp = s.out.h;
        g.wp = s.out.w;
        g.plane = static_cast<std::size_t>(s.out.h) * s.out.w;
        g.chan = n;
        g.buf.assign(n * s.out_channels + kSlack, 0.0);
        std::copy(grad_out.begin(), grad_out.begin() + n * s.out_channels, g.buf.begin());
        std::vector<double> col(rows * n);
        gemm_forward(g, row_offsets(s.out_channels, n), static_cast<int>(rows), wt, {}, n, s.out, col);
        const std::size_t in_vox = s.in.voxels();
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < s.in_channels; ++ci) {
            double* gi = grad_in.data() + ci * in_vox;
            for (std::size_t k = 0; k < taps; ++k) {
                const int a = static_cast<int>(k / (kh * kw)), b = static_cast<int>(k / kw % kh),
                          c = static_cast<int>(k % kw);
                const double* src = col.data() + (ci * taps + k) * n;
                for (int z = 0; z < s.out.d; ++z) {
                    const int zi = z * s.stride + a - s.pad[0];
                    if (zi < 0 || zi >= s.in.d) continue;
                    for (int y = 0; y < s.out.h; ++y) {
                        const int yi = y * s.stride + b - s.pad[1];
                        if (yi < 0 || yi >= s.in.h) continue;
                        double* irow = gi + (static_cast<std::size_t>(zi) * s.in.h + yi) * s.in.w;
                        const double* crow = src + (static_cast<std::size_t>(z) * s.out.h + y) * s.out.w;
                        for (int x = 0; x < s.out.w; ++x) {
                            const int xi = x * s.stride + c - s.pad[2];
                            if (xi >= 0 && xi < s.in.w) irow[xi] += crow[x];
                        }
                    }
                }
            }
        }
        return;
    }
    // Adjoint of a stride-1 "same" conv with odd kernels: correlate grad_out
    // with the flipped kernel, input and output channels swapped.
    std::vector<double> flipped(weight.size());
    for (int co = 0; co < s.out_channels; ++co)
        for (int ci = 0; ci < s.in_channels; ++ci)
            for (std::size_t k = 0; k < taps; ++k)
                flipped[(static_cast<std::size_t>(ci) * s.out_channels + co) * taps + (taps - 1 - k)] =
                    weight[(static_cast<std::size_t>(co) * s.in_channels + ci) * taps + k];
    const ConvShape adj = make_conv_shape(s.out_channels, s.in_channels, s.out, s.kernel, 1);
    const Padded p = pad_input(grad_out, s.out_channels, s.out, s.pad);
    std::vector<double> tmp(static_cast<std::size_t>(s.in_channels) * s.in.voxels());
    gemm_forward(p, tap_offsets(adj, p), s.in_channels, flipped, {}, flat_extent(p, adj.out), adj.out, tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) grad_in[i] += tmp[i];
}

void conv3d_backward_weight(const ConvShape& s, std::span<const double> grad_out, std::span<const double> in,
                            std::span<double> grad_weight, std::span<double> grad_bias) {
    const std::size_t out_vox = s.out.voxels();
    if (!grad_bias.empty()) {
        for (int co = 0; co < s.out_channels; ++co) {
            const double* go = grad_out.data() + co * out_vox;
            double acc = 0.0;
            for (std::size_t t = 0; t < out_vox; ++t) acc += go[t];
            grad_bias[co] += acc;
        }
    }
    if (s.stride != 1) {
        const Padded col = im2col(s, in);
        gemm_weight(col, row_offsets(grad_weight.size() / s.out_channels, col.chan), s.out_channels, s.out, col.chan,
                    grad_out, grad_weight);
        return;
    }
    const Padded p = pad_input(in, s.in_channels, s.in, s.pad);
    gemm_weight(p, tap_offsets(s, p), s.out_channels, s.out, flat_extent(p, s.out), grad_out, grad_weight);
}

namespace {

struct Corner {
    AxisSample z, y, x;
};

inline Corner locate(Dims dims, const double* field, std::size_t vox, std::size_t stride, int z, int y, int x) {
    return {axis_sample(z + field[vox], dims.d), axis_sample(y + field[stride + vox], dims.h),
            axis_sample(x + field[2 * stride + vox], dims.w)};
}

inline double interp(const double* img, Dims dims, const Corner& k) {
    const std::size_t H = dims.h, W = dims.w;
    auto v = [&](int a, int b, int c) { return img[(static_cast<std::size_t>(a) * H + b) * W + c]; };
    const double fz = k.z.frac, fy = k.y.frac, fx = k.x.frac;
    const double c00 = v(k.z.i0, k.y.i0, k.x.i0) * (1 - fx) + v(k.z.i0, k.y.i0, k.x.i1) * fx;
    const double c01 = v(k.z.i0, k.y.i1, k.x.i0) * (1 - fx) + v(k.z.i0, k.y.i1, k.x.i1) * fx;
    const double c10 = v(k.z.i1, k.y.i0, k.x.i0) * (1 - fx) + v(k.z.i1, k.y.i0, k.x.i1) * fx;
    const double c11 = v(k.z.i1, k.y.i1, k.x.i0) * (1 - fx) + v(k.z.i1, k.y.i1, k.x.i1) * fx;
    const double c0 = c00 * (1 - fy) + c01 * fy;
    const double c1 = c10 * (1 - fy) + c11 * fy;
    return c0 * (1 - fz) + c1 * fz;
}

} // namespace

void warp_forward(int channels, Dims dims, std::span<const double> image, std::span<const double> field,
                  std::span<double> out) {
    const std::size_t vox = dims.voxels();
#pragma omp parallel for schedule(static)
    for (int z = 0; z < dims.d; ++z) {
        for (int y = 0; y < dims.h; ++y) {
            for (int x = 0; x < dims.w; ++x) {
                const std::size_t i = (static_cast<std::size_t>(z) * dims.h + y) * dims.w + x;
                const Corner k = locate(dims, field.data(), i, vox, z, y, x);
                for (int c = 0; c < channels; ++c) out[c * vox + i] = interp(image.data() + c * vox, dims, k);
            }
        }
    }
}

void warp_backward(int channels, Dims dims, std::span<const double> image, std::span<const double> field,
                   std::span<const double> grad_out, std::span<double> grad_image, std::span<double> grad_field) {
    const std::size_t vox = dims.voxels();
    const std::size_t H = dims.h, W = dims.w;
    if (!grad_field.empty()) {
#pragma omp parallel for schedule(static)
        for (int z = 0; z < dims.d; ++z) {
            for (int y = 0; y < dims.h; ++y) {
                for (int x = 0; x < dims.w; ++x) {
                    const std::size_t i = (static_cast<std::size_t>(z) * H + y) * W + x;
                    const Corner k = locate(dims, field.data(), i, vox, z, y, x);
                    const double fz = k.z.frac, fy = k.y.frac, fx = k.x.frac;
                    double gz = 0, gy = 0, gx = 0;
                    for (int c = 0; c < channels; ++c) {
                        const double g = grad_out[c * vox + i];
                        if (g == 0.0) continue;
                        const double* img = image.data() + c * vox;
                        auto v = [&](int a, int b, int cc) { return img[(static_cast<std::size_t>(a) * H + b) * W + cc]; };
                        const double v000 = v(k.z.i0, k.y.i0, k.x.i0), v001 = v(k.z.i0, k.y.i0, k.x.i1);
                        const double v010 = v(k.z.i0, k.y.i1, k.x.i0), v011 = v(k.z.i0, k.y.i1, k.x.i1);
                        const double v100 = v(k.z.i1, k.y.i0, k.x.i0), v101 = v(k.z.i1, k.y.i0, k.x.i1);
                        const double v110 = v(k.z.i1, k.y.i1, k.x.i0), v111 = v(k.z.i1, k.y.i1, k.x.i1);
                        const double c00 = v000 * (1 - fx) + v001 * fx, c01 = v010 * (1 - fx) + v011 * fx;
                        const double c10 = v100 * (1 - fx) + v101 * fx, c11 = v110 * (1 - fx) + v111 * fx;
                        const double c0 = c00 * (1 - fy) + c01 * fy, c1 = c10 * (1 - fy) + c11 * fy;
                        gz += g * (c1 - c0);
                        gy += g * ((c01 - c00) * (1 - fz) + (c11 - c10) * fz);
                        const double dx0 = (v001 - v000) * (1 - fy) + (v011 - v010) * fy;
                        const double dx1 = (v101 - v100) * (1 - fy) + (v111 - v110) * fy;
                        gx += g * (dx0 * (1 - fz) + dx1 * fz);
                    }
                    grad_field[i] += gz * k.z.active;
                    grad_field[vox + i] += gy * k.y.active;
                    grad_field[2 * vox + i] += gx * k.x.active;
                }
            }
        }
    }
    if (!grad_image.empty()) {
        // scatter: one thread owns a channel so corner collisions are serialized
#pragma omp parallel for schedule(static)
        for (int c = 0; c < channels; ++c) {
            double* gi = grad_image.data() + c * vox;
            const double* go = grad_out.data() + c * vox;
            for (int z = 0; z < dims.d; ++z) {
                for (int y = 0; y < dims.h; ++y) {
                    for (int x = 0; x < dims.w; ++x) {
                        const std::size_t i = (static_cast<std::size_t>(z) * H + y) * W + x;
                        const double g = go[i];
                        if (g == 0.0) continue;
                        const Corner k = locate(dims, field.data(), i, vox, z, y, x);
                        const double fz = k.z.frac, fy = k.y.frac, fx = k.x.frac;
                        auto at = [&](int a, int b, int cc) -> double& { return gi[(static_cast<std::size_t>(a) * H + b) * W + cc]; };
                        at(k.z.i0, k.y.i0, k.x.i0) += g * (1 - fz) * (1 - fy) * (1 - fx);
                        at(k.z.i0, k.y.i0, k.x.i1) += g * (1 - fz) * (1 - fy) * fx;
                        at(k.z.i0, k.y.i1, k.x.i0) += g * (1 - fz) * fy * (1 - fx);
                        at(k.z.i0, k.y.i1, k.x.i1) += g * (1 - fz) * fy * fx;
                        at(k.z.i1, k.y.i0, k.x.i0) += g * fz * (1 - fy) * (1 - fx);
                        at(k.z.i1, k.y.i0, k.x.i1) += g * fz * (1 - fy) * fx;
                        at(k.z.i1, k.y.i1, k.x.i0) += g * fz * fy * (1 - fx);
                        at(k.z.i1, k.y.i1, k.x.i1) += g * fz * fy * fx;
                    }
                }
            }
        }
    }
}

std::array<int, 3> correlation_offset(int r, int k) {
    const int h = r / 2;
    return {k / (r * r) - h, (k / r) % r - h, k % r - h};
}

namespace {

// Index window along one axis where both p and p + o are inside [0, n).
inline void overlap(int n, int o, int& lo, int& hi) {
    lo = std::max(0, -o);
    hi = std::min(n, n - o);
}

} // namespace

void correlation_forward(int channels, Dims dims, int r, std::span<const double> fixed,
                         std::span<const double> moving, std::span<double> out) {
    const std::size_t vox = dims.voxels();
    const int taps = r * r * r;
    const double inv_c = 1.0 / channels;
#pragma omp parallel for schedule(static)
    for (int k = 0; k < taps; ++k) {
        const auto [dz, dy, dx] = correlation_offset(r, k);
        double* o = out.data() + k * vox;
        std::fill(o, o + vox, 0.0);
        int z0, z1, y0, y1, x0, x1;
        overlap(dims.d, dz, z0, z1);
        overlap(dims.h, dy, y0, y1);
        overlap(dims.w, dx, x0, x1);
        const std::ptrdiff_t shift = (static_cast<std::ptrdiff_t>(dz) * dims.h + dy) * dims.w + dx;
        for (int c = 0; c < channels; ++c) {
            const double* f = fixed.data() + c * vox;
            const double* m = moving.data() + c * vox;
            for (int z = z0; z < z1; ++z)
                for (int y = y0; y < y1; ++y) {
                    const std::size_t row = (static_cast<std::size_t>(z) * dims.h + y) * dims.w;
                    for (int x = x0; x < x1; ++x) o[row + x] += f[row + x] * m[row + x + shift];
                }
        }
        for (std::size_t t = 0; t < vox; ++t) o[t] *= inv_c;
    }
}

void correlation_backward(int channels, Dims dims, int r, std::span<const double> fixed,
                          std::span<const double> moving, std::span<const double> grad_out,
                          std::span<double> grad_fixed, std::span<double> grad_moving) {
    const std::size_t vox = dims.voxels();
    const int taps = r * r * r;
    const double inv_c = 1.0 / channels;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        for (int k = 0; k < taps; ++k) {
            const auto [dz, dy, dx] = correlation_offset(r, k);
            int z0, z1, y0, y1, x0, x1;
            overlap(dims.d, dz, z0, z1);
            overlap(dims.h, dy, y0, y1);
            overlap(dims.w, dx, x0, x1);
            const std::ptrdiff_t shift = (static_cast<std::ptrdiff_t>(dz) * dims.h + dy) * dims.w + dx;
            const double* g = grad_out.data() + k * vox;
            const double* f = fixed.data() + c * vox;
            const double* m = moving.data() + c * vox;
            double* gf = grad_fixed.empty() ? nullptr : grad_fixed.data() + c * vox;
            double* gm = grad_moving.empty() ? nullptr : grad_moving.data() + c * vox;
            for (int z = z0; z < z1; ++z)
                for (int y = y0; y < y1; ++y) {
                    const std::size_t row = (static_cast<std::size_t>(z) * dims.h + y) * dims.w;
                    if (gf)
                        for (int x = x0; x < x1; ++x) gf[row + x] += inv_c * g[row + x] * m[row + x + shift];
                    if (gm)
                        for (int x = x0; x < x1; ++x) gm[row + x + shift] += inv_c * g[row + x] * f[row + x];
                }
        }
    }
}

} // namespace recorr::kernels
