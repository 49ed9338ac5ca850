#include "recorr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "recorr/volume_io.hpp"

namespace recorr {

LabelMap::LabelMap(Dims dims, Spacing spacing) : LabelMap(dims, std::vector<int>(dims.voxels(), 0), spacing) {}

LabelMap::LabelMap(Dims dims, std::vector<int> labels, Spacing spacing)
    : dims_(dims), spacing_(spacing), labels_(std::move(labels)) {
    require(dims.d >= 1 && dims.h >= 1 && dims.w >= 1, "label map dims must be >= 1");
    require(labels_.size() == dims.voxels(), "label map: buffer length does not match dims");
    set_spacing(spacing);
    for (int l : labels_) require(l >= 0, "label map: labels must be non-negative");
}

void LabelMap::set_spacing(const Spacing& s) {
    for (double v : s) require(v > 0.0 && std::isfinite(v), "label map spacing must be positive");
    spacing_ = s;
}

std::set<int> LabelMap::label_set() const { return std::set<int>(labels_.begin(), labels_.end()); }

std::size_t LabelMap::count(int label) const {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
}

Volume LabelMap::to_volume() const {
    Volume v(1, dims_, spacing_);
    for (std::size_t i = 0; i < labels_.size(); ++i) v[i] = labels_[i];
    return v;
}

LabelMap LabelMap::from_volume(const Volume& v) {
    if (v.channels() != 1) throw DataError("label volume must have one channel");
    std::vector<int> labels(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = v[i];
        if (!(x >= 0.0) || x != std::floor(x) || x > 1e6) throw DataError("label volume holds a non-label value");
        labels[i] = static_cast<int>(x);
    }
    return LabelMap(v.dims(), std::move(labels), v.spacing());
}

void write_labels(const std::filesystem::path& path, const LabelMap& labels) { write_vol3(path, labels.to_volume()); }

LabelMap read_labels(const std::filesystem::path& path) { return LabelMap::from_volume(read_vol3(path)); }

double dice_label(const LabelMap& a, const LabelMap& b, int label) {
    require(a.dims() == b.dims(), "dice: dims differ");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool ia = a[i] == label, ib = b[i] == label;
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    require(na + nb > 0, "dice: label " + std::to_string(label) + " absent from both maps");
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

DiceScores dice(const LabelMap& a, const LabelMap& b) {
    require(a.dims() == b.dims(), "dice: dims " + to_string(a.dims()) + " vs " + to_string(b.dims()));
    std::set<int> labels = a.label_set();
    const std::set<int> lb = b.label_set();
    labels.insert(lb.begin(), lb.end());
    DiceScores out;
    for (int l : labels)
        if (l >= 1) out.per_label[l] = dice_label(a, b, l);
    double acc = 0.0;
    for (const auto& [_, v] : out.per_label) acc += v;
    out.mean = out.per_label.empty() ? 1.0 : acc / static_cast<double>(out.per_label.size());
    return out;
}

std::vector<std::array<int, 3>> surface_voxels(const LabelMap& m, int label) {
    const Dims d = m.dims();
    std::vector<std::array<int, 3>> out;
    auto inside = [&](int z, int y, int x) {
        return z >= 0 && y >= 0 && x >= 0 && z < d.d && y < d.h && x < d.w && m.at(z, y, x) == label;
    };
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                if (m.at(z, y, x) != label) continue;
                if (!inside(z - 1, y, x) || !inside(z + 1, y, x) || !inside(z, y - 1, x) || !inside(z, y + 1, x) ||
                    !inside(z, y, x - 1) || !inside(z, y, x + 1))
                    out.push_back({z, y, x});
            }
    return out;
}

std::vector<double> directed_distances(const std::vector<std::array<int, 3>>& from,
                                       const std::vector<std::array<int, 3>>& to, const Spacing& spacing) {
    require(!to.empty(), "surface distance: target surface is empty");
    std::vector<double> out(from.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < from.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : to) {
            const double dz = (from[i][0] - q[0]) * spacing[0];
            const double dy = (from[i][1] - q[1]) * spacing[1];
            const double dx = (from[i][2] - q[2]) * spacing[2];
            best = std::min(best, dz * dz + dy * dy + dx * dx);
        }
        out[i] = std::sqrt(best);
    }
    return out;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
    require(!values.empty(), "percentile of an empty set");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    std::size_t rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

namespace {

struct SurfacePair {
    std::vector<double> ab;
    std::vector<double> ba;
};

SurfacePair surface_pair(const LabelMap& a, const LabelMap& b, int label) {
    require(a.dims() == b.dims(), "surface metric: dims differ");
    require(a.spacing() == b.spacing(), "surface metric: spacing differs");
    const auto sa = surface_voxels(a, label), sb = surface_voxels(b, label);
    if (sa.empty() || sb.empty())
        throw ContractError("surface metric: label " + std::to_string(label) + " is empty in one map");
    return {directed_distances(sa, sb, a.spacing()), directed_distances(sb, sa, a.spacing())};
}

} // namespace

double hd95(const LabelMap& a, const LabelMap& b, int label) {
    SurfacePair p = surface_pair(a, b, label);
    return std::max(nearest_rank_percentile(std::move(p.ab), 95.0), nearest_rank_percentile(std::move(p.ba), 95.0));
}

double assd(const LabelMap& a, const LabelMap& b, int label) {
    const SurfacePair p = surface_pair(a, b, label);
    double acc = 0.0;
    for (double v : p.ab) acc += v;
    for (double v : p.ba) acc += v;
    return acc / static_cast<double>(p.ab.size() + p.ba.size());
}

double hausdorff(const LabelMap& a, const LabelMap& b, int label) {
    const SurfacePair p = surface_pair(a, b, label);
    return std::max(*std::max_element(p.ab.begin(), p.ab.end()), *std::max_element(p.ba.begin(), p.ba.end()));
}

LabelMap warp_labels(const LabelMap& labels, const DisplacementField& field) {
    require(labels.dims() == field.dims(), "warp_labels: dims differ");
    const Dims d = labels.dims();
    LabelMap out(d, labels.spacing());
    auto nearest = [](double c, int n) {
        const long r = std::lround(std::isfinite(c) ? c : 0.0);
        return static_cast<int>(std::clamp<long>(r, 0, n - 1));
    };
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                const auto u = field.at(z, y, x);
                out.at(z, y, x) = labels.at(nearest(z + u[0], d.d), nearest(y + u[1], d.h), nearest(x + u[2], d.w));
            }
    return out;
}

double endpoint_error(const DisplacementField& predicted, const DisplacementField& truth, const LabelMap* mask) {
    require(predicted.dims() == truth.dims(), "endpoint_error: dims differ");
    if (mask) require(mask->dims() == truth.dims(), "endpoint_error: mask dims differ");
    const std::size_t vox = truth.dims().voxels();
    const double* p = predicted.volume().data();
    const double* t = truth.volume().data();
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < vox; ++i) {
        if (mask && (*mask)[i] == 0) continue;
        const double dz = p[i] - t[i], dy = p[vox + i] - t[vox + i], dx = p[2 * vox + i] - t[2 * vox + i];
        acc += std::sqrt(dz * dz + dy * dy + dx * dx);
        ++n;
    }
    require(n > 0, "endpoint_error: empty mask");
    return acc / static_cast<double>(n);
}

} // namespace recorr
