#include "recorr/volume.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "recorr/kernels.hpp"

namespace recorr {

std::string to_string(const Dims& dims) {
    std::ostringstream os;
    os << dims.d << "x" << dims.h << "x" << dims.w;
    return os.str();
}

namespace {

void check_dims(Dims dims) {
    require(dims.d >= 1 && dims.h >= 1 && dims.w >= 1, "volume dims must be >= 1, got " + to_string(dims));
}

void check_spacing(const Spacing& s) {
    for (double v : s) require(v > 0.0 && std::isfinite(v), "volume spacing must be positive");
}

} // namespace

Volume::Volume(int channels, Dims dims, Spacing spacing)
    : channels_(channels), dims_(dims), spacing_(spacing) {
    require(channels >= 1, "volume needs at least one channel");
    check_dims(dims);
    check_spacing(spacing);
    values_.assign(static_cast<std::size_t>(channels) * dims.voxels(), 0.0);
}

Volume::Volume(int channels, Dims dims, std::vector<double> values, Spacing spacing)
    : channels_(channels), dims_(dims), spacing_(spacing), values_(std::move(values)) {
    require(channels >= 1, "volume needs at least one channel");
    check_dims(dims);
    check_spacing(spacing);
    require(values_.size() == static_cast<std::size_t>(channels) * dims.voxels(),
            "volume value buffer length must equal C*D*H*W");
}

Volume Volume::filled(int channels, Dims dims, double value, Spacing spacing) {
    Volume v(channels, dims, spacing);
    std::fill(v.values_.begin(), v.values_.end(), value);
    return v;
}

void Volume::set_spacing(const Spacing& s) {
    check_spacing(s);
    spacing_ = s;
}

bool Volume::all_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

DisplacementField::DisplacementField(Dims dims) : v_(3, dims) {}

DisplacementField::DisplacementField(Volume components) : v_(std::move(components)) {
    require(v_.channels() == 3, "displacement field needs exactly 3 channels");
}

DisplacementField DisplacementField::constant(Dims dims, std::array<double, 3> u) {
    DisplacementField f(dims);
    for (int a = 0; a < 3; ++a) {
        auto ch = f.v_.channel(a);
        std::fill(ch.begin(), ch.end(), u[a]);
    }
    return f;
}

double sample_trilinear(const Volume& image, int channel, double z, double y, double x) {
    const Dims d = image.dims();
    const auto az = kernels::axis_sample(z, d.d);
    const auto ay = kernels::axis_sample(y, d.h);
    const auto ax = kernels::axis_sample(x, d.w);
    auto v = [&](int a, int b, int c) { return image.at(channel, a, b, c); };
    const double c00 = v(az.i0, ay.i0, ax.i0) * (1 - ax.frac) + v(az.i0, ay.i0, ax.i1) * ax.frac;
    const double c01 = v(az.i0, ay.i1, ax.i0) * (1 - ax.frac) + v(az.i0, ay.i1, ax.i1) * ax.frac;
    const double c10 = v(az.i1, ay.i0, ax.i0) * (1 - ax.frac) + v(az.i1, ay.i0, ax.i1) * ax.frac;
    const double c11 = v(az.i1, ay.i1, ax.i0) * (1 - ax.frac) + v(az.i1, ay.i1, ax.i1) * ax.frac;
    return (c00 * (1 - ay.frac) + c01 * ay.frac) * (1 - az.frac) + (c10 * (1 - ay.frac) + c11 * ay.frac) * az.frac;
}

Volume warp(const Volume& image, const DisplacementField& field) {
    require(image.dims() == field.dims(),
            "warp: image dims " + to_string(image.dims()) + " != field dims " + to_string(field.dims()));
    Volume out(image.channels(), image.dims(), image.spacing());
    kernels::warp_forward(image.channels(), image.dims(), image.values(), field.volume().values(), out.values());
    return out;
}

DisplacementField compose(const DisplacementField& outer, const DisplacementField& inner) {
    require(outer.dims() == inner.dims(), "compose: dimension mismatch");
    Volume sampled = warp(outer.volume(), inner);
    auto dst = sampled.values();
    auto src = inner.volume().values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    return DisplacementField(std::move(sampled));
}

Volume upsample_volume(const Volume& image) {
    const Dims coarse = image.dims();
    const Spacing s = image.spacing();
    Volume out(image.channels(), coarse.doubled(), Spacing{s[0] / 2, s[1] / 2, s[2] / 2});
    kernels::upsample2_forward(image.channels(), coarse, image.values(), out.values());
    return out;
}

DisplacementField upsample_field(const DisplacementField& field) {
    Volume up = upsample_volume(field.volume());
    for (double& v : up.values()) v *= 2.0;
    return DisplacementField(std::move(up));
}

Volume downsample_volume(const Volume& image) {
    const Dims d = image.dims();
    require(d.d % 2 == 0 && d.h % 2 == 0 && d.w % 2 == 0,
            "downsample_volume: dims " + to_string(d) + " not divisible by 2");
    const Spacing s = image.spacing();
    Volume out(image.channels(), d.halved(), Spacing{s[0] * 2, s[1] * 2, s[2] * 2});
    const Dims h = out.dims();
    for (int c = 0; c < image.channels(); ++c)
        for (int z = 0; z < h.d; ++z)
            for (int y = 0; y < h.h; ++y)
                for (int x = 0; x < h.w; ++x) {
                    double acc = 0.0;
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int e = 0; e < 2; ++e) acc += image.at(c, 2 * z + a, 2 * y + b, 2 * x + e);
                    out.at(c, z, y, x) = acc * 0.125;
                }
    return out;
}

DisplacementField downsample_field(const DisplacementField& field) {
    Volume down = downsample_volume(field.volume());
    down.set_spacing({1.0, 1.0, 1.0});
    for (double& v : down.values()) v *= 0.5;
    return DisplacementField(std::move(down));
}

JacobianMap jacobian_det(const DisplacementField& field) {
    const Dims d = field.dims();
    require(d.d >= 3 && d.h >= 3 && d.w >= 3, "jacobian_det: grid must be at least 3 voxels per axis");
    JacobianMap jm;
    jm.dims = {d.d - 2, d.h - 2, d.w - 2};
    jm.det.resize(jm.dims.voxels());
    const Volume& u = field.volume();
    std::size_t k = 0;
    for (int z = 1; z < d.d - 1; ++z)
        for (int y = 1; y < d.h - 1; ++y)
            for (int x = 1; x < d.w - 1; ++x) {
                double j[3][3];
                for (int a = 0; a < 3; ++a) {
                    j[a][0] = 0.5 * (u.at(a, z + 1, y, x) - u.at(a, z - 1, y, x));
                    j[a][1] = 0.5 * (u.at(a, z, y + 1, x) - u.at(a, z, y - 1, x));
                    j[a][2] = 0.5 * (u.at(a, z, y, x + 1) - u.at(a, z, y, x - 1));
                    j[a][a] += 1.0;
                }
                jm.det[k++] = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) -
                              j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0]) +
                              j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
            }
    return jm;
}

double fold_fraction(const JacobianMap& jmap) {
    if (jmap.det.empty()) return 0.0;
    std::size_t folded = 0;
    for (double v : jmap.det)
        if (v <= 0.0) ++folded;
    return static_cast<double>(folded) / static_cast<double>(jmap.det.size());
}

Volume pad_to_multiple(const Volume& image, int multiple) {
    require(multiple >= 1, "pad_to_multiple: multiple must be positive");
    const Dims d = image.dims();
    auto up = [&](int n) { return (n + multiple - 1) / multiple * multiple; };
    const Dims p{up(d.d), up(d.h), up(d.w)};
    if (p == d) return image;
    Volume out(image.channels(), p, image.spacing());
    for (int c = 0; c < image.channels(); ++c)
        for (int z = 0; z < p.d; ++z)
            for (int y = 0; y < p.h; ++y)
                for (int x = 0; x < p.w; ++x)
                    out.at(c, z, y, x) = image.at(c, std::min(z, d.d - 1), std::min(y, d.h - 1), std::min(x, d.w - 1));
    return out;
}

Volume crop(const Volume& image, Dims dims) {
    const Dims d = image.dims();
    require(dims.d <= d.d && dims.h <= d.h && dims.w <= d.w, "crop: target larger than source");
    Volume out(image.channels(), dims, image.spacing());
    for (int c = 0; c < image.channels(); ++c)
        for (int z = 0; z < dims.d; ++z)
            for (int y = 0; y < dims.h; ++y)
                for (int x = 0; x < dims.w; ++x) out.at(c, z, y, x) = image.at(c, z, y, x);
    return out;
}

} // namespace recorr

namespace recorr::kernels {

namespace {

std::vector<AxisSample> upsample_taps(int coarse) {
    std::vector<AxisSample> taps(2 * coarse);
    for (int p = 0; p < 2 * coarse; ++p) taps[p] = axis_sample(0.5 * p - 0.25, coarse);
    return taps;
}

} // namespace

void upsample2_forward(int channels, Dims coarse, std::span<const double> in, std::span<double> out) {
    const auto tz = upsample_taps(coarse.d), ty = upsample_taps(coarse.h), tx = upsample_taps(coarse.w);
    const Dims fine = coarse.doubled();
    const std::size_t cv = coarse.voxels(), fv = fine.voxels();
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        const double* src = in.data() + c * cv;
        double* dst = out.data() + c * fv;
        auto v = [&](int a, int b, int e) { return src[(static_cast<std::size_t>(a) * coarse.h + b) * coarse.w + e]; };
        for (int z = 0; z < fine.d; ++z)
            for (int y = 0; y < fine.h; ++y)
                for (int x = 0; x < fine.w; ++x) {
                    const AxisSample &az = tz[z], &ay = ty[y], &ax = tx[x];
                    const double c00 = v(az.i0, ay.i0, ax.i0) * (1 - ax.frac) + v(az.i0, ay.i0, ax.i1) * ax.frac;
                    const double c01 = v(az.i0, ay.i1, ax.i0) * (1 - ax.frac) + v(az.i0, ay.i1, ax.i1) * ax.frac;
                    const double c10 = v(az.i1, ay.i0, ax.i0) * (1 - ax.frac) + v(az.i1, ay.i0, ax.i1) * ax.frac;
                    const double c11 = v(az.i1, ay.i1, ax.i0) * (1 - ax.frac) + v(az.i1, ay.i1, ax.i1) * ax.frac;
                    dst[(static_cast<std::size_t>(z) * fine.h + y) * fine.w + x] =
                        (c00 * (1 - ay.frac) + c01 * ay.frac) * (1 - az.frac) +
                        (c10 * (1 - ay.frac) + c11 * ay.frac) * az.frac;
                }
    }
}

void upsample2_backward(int channels, Dims coarse, std::span<const double> grad_out, std::span<double> grad_in) {
    const auto tz = upsample_taps(coarse.d), ty = upsample_taps(coarse.h), tx = upsample_taps(coarse.w);
    const Dims fine = coarse.doubled();
    const std::size_t cv = coarse.voxels(), fv = fine.voxels();
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        const double* g = grad_out.data() + c * fv;
        double* dst = grad_in.data() + c * cv;
        auto at = [&](int a, int b, int e) -> double& {
            return dst[(static_cast<std::size_t>(a) * coarse.h + b) * coarse.w + e];
        };
        for (int z = 0; z < fine.d; ++z)
            for (int y = 0; y < fine.h; ++y)
                for (int x = 0; x < fine.w; ++x) {
                    const double gv = g[(static_cast<std::size_t>(z) * fine.h + y) * fine.w + x];
                    const AxisSample &az = tz[z], &ay = ty[y], &ax = tx[x];
                    const double wz[2] = {1 - az.frac, az.frac}, wy[2] = {1 - ay.frac, ay.frac},
                                 wx[2] = {1 - ax.frac, ax.frac};
                    const int zs[2] = {az.i0, az.i1}, ys[2] = {ay.i0, ay.i1}, xs[2] = {ax.i0, ax.i1};
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b)
                            for (int e = 0; e < 2; ++e) at(zs[a], ys[b], xs[e]) += gv * wz[a] * wy[b] * wx[e];
                }
    }
}

} // namespace recorr::kernels
