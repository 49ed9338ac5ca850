#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "recorr/errors.hpp"

namespace recorr {

// Voxel counts along (z, y, x).
struct Dims {
    int d = 1;
    int h = 1;
    int w = 1;

    std::size_t voxels() const {
        return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    Dims halved() const { return {d / 2, h / 2, w / 2}; }
    Dims doubled() const { return {d * 2, h * 2, w * 2}; }
    int operator[](int axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
    friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);

// mm per voxel along (z, y, x).
using Spacing = std::array<double, 3>;

// Multi-channel 3-D grid of reals.
//
// Layout is channel-major with x fastest: index = ((c*D + z)*H + y)*W + x.
// This matches the on-disk .vol3 ordering so I/O is a straight copy.
class Volume {
  public:
    Volume() = default;
    Volume(int channels, Dims dims, Spacing spacing = {1.0, 1.0, 1.0});
    Volume(int channels, Dims dims, std::vector<double> values, Spacing spacing = {1.0, 1.0, 1.0});

    static Volume filled(int channels, Dims dims, double value, Spacing spacing = {1.0, 1.0, 1.0});

    int channels() const { return channels_; }
    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    void set_spacing(const Spacing& s);
    std::size_t size() const { return values_.size(); }
    std::size_t channel_stride() const { return dims_.voxels(); }

    std::size_t index(int c, int z, int y, int x) const {
        return ((static_cast<std::size_t>(c) * dims_.d + z) * dims_.h + y) * dims_.w + x;
    }
    double& at(int c, int z, int y, int x) { return values_[index(c, z, y, x)]; }
    double at(int c, int z, int y, int x) const { return values_[index(c, z, y, x)]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<double> channel(int c) { return {values_.data() + c * channel_stride(), channel_stride()}; }
    std::span<const double> channel(int c) const {
        return {values_.data() + c * channel_stride(), channel_stride()};
    }
    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }

    bool same_shape(const Volume& o) const { return channels_ == o.channels_ && dims_ == o.dims_; }
    bool all_finite() const;

    friend bool operator==(const Volume& a, const Volume& b) {
        return a.channels_ == b.channels_ && a.dims_ == b.dims_ && a.values_ == b.values_;
    }

  private:
    int channels_ = 0;
    Dims dims_{};
    Spacing spacing_{1.0, 1.0, 1.0};
    std::vector<double> values_;
};

// Per-voxel displacement u in voxel units, components ordered (z, y, x).
// The induced map is phi(p) = p + u(p). Stored as a 3-channel Volume.
class DisplacementField {
  public:
    DisplacementField() = default;
    explicit DisplacementField(Dims dims);
    explicit DisplacementField(Volume components);

    static DisplacementField constant(Dims dims, std::array<double, 3> u);

    const Dims& dims() const { return v_.dims(); }
    std::array<double, 3> at(int z, int y, int x) const {
        return {v_.at(0, z, y, x), v_.at(1, z, y, x), v_.at(2, z, y, x)};
    }
    double& component(int axis, int z, int y, int x) { return v_.at(axis, z, y, x); }
    double component(int axis, int z, int y, int x) const { return v_.at(axis, z, y, x); }

    const Volume& volume() const { return v_; }
    Volume& volume() { return v_; }

    friend bool operator==(const DisplacementField& a, const DisplacementField& b) = default;

  private:
    Volume v_;
};

// Stationary velocity; integrated by exp_field into a DisplacementField.
using VelocityField = DisplacementField;

// Jacobian determinant of phi = id + u over interior voxels only.
// dims are the interior dims (D-2, H-2, W-2).
struct JacobianMap {
    Dims dims;
    std::vector<double> det;
};

// Border-clamped trilinear sample of one channel at continuous (z, y, x).
double sample_trilinear(const Volume& image, int channel, double z, double y, double x);

// output(p) = image sampled at p + u(p); border clamp outside the grid.
Volume warp(const Volume& image, const DisplacementField& field);

// u(p) = u_inner(p) + u_outer(p + u_inner(p)).
DisplacementField compose(const DisplacementField& outer, const DisplacementField& inner);

// Trilinear (half-voxel aligned) doubling of every axis; vectors scaled by 2.
DisplacementField upsample_field(const DisplacementField& field);

// Trilinear (half-voxel aligned) doubling of every axis, values unchanged.
Volume upsample_volume(const Volume& image);

// 2x2x2 mean pooling per channel. Spacing doubles.
Volume downsample_volume(const Volume& image);

// Mean-pool the grid and halve the vectors (adjoint-ish of upsample_field).
DisplacementField downsample_field(const DisplacementField& field);

JacobianMap jacobian_det(const DisplacementField& field);

// Fraction of interior voxels with detJ <= 0.
double fold_fraction(const JacobianMap& jmap);

// Replicate-pad on the high side of each axis up to a multiple of `multiple`.
Volume pad_to_multiple(const Volume& image, int multiple);
Volume crop(const Volume& image, Dims dims);

} // namespace recorr
