#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <vector>

#include "recorr/volume.hpp"

namespace recorr {

class LabelMap {
  public:
    LabelMap() = default;
    explicit LabelMap(Dims dims, Spacing spacing = {1.0, 1.0, 1.0});
    LabelMap(Dims dims, std::vector<int> labels, Spacing spacing = {1.0, 1.0, 1.0});

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    void set_spacing(const Spacing& s);
    std::size_t size() const { return labels_.size(); }

    int& at(int z, int y, int x) { return labels_[index(z, y, x)]; }
    int at(int z, int y, int x) const { return labels_[index(z, y, x)]; }
    int operator[](std::size_t i) const { return labels_[i]; }
    int& operator[](std::size_t i) { return labels_[i]; }
    const std::vector<int>& values() const { return labels_; }

    std::set<int> label_set() const;
    std::size_t count(int label) const;

    Volume to_volume() const;
    static LabelMap from_volume(const Volume& v);

    friend bool operator==(const LabelMap& a, const LabelMap& b) {
        return a.dims_ == b.dims_ && a.labels_ == b.labels_ && a.spacing_ == b.spacing_;
    }

  private:
    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * dims_.h + y) * dims_.w + x;
    }
    Dims dims_{};
    Spacing spacing_{1.0, 1.0, 1.0};
    std::vector<int> labels_;
};

void write_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_labels(const std::filesystem::path& path);

// Per-label Dice over foreground labels (>= 1) present in either map.
struct DiceScores {
    std::map<int, double> per_label;
    double mean = 0.0;
};
DiceScores dice(const LabelMap& a, const LabelMap& b);
double dice_label(const LabelMap& a, const LabelMap& b, int label);

// Boundary voxels of one label: inside, with a 6-neighbour outside the label
// or outside the grid. Returned as voxel indices (z, y, x).
std::vector<std::array<int, 3>> surface_voxels(const LabelMap& m, int label);

// For each point of `from`, distance in mm to the nearest point of `to`.
std::vector<double> directed_distances(const std::vector<std::array<int, 3>>& from,
                                       const std::vector<std::array<int, 3>>& to, const Spacing& spacing);

// Nearest-rank 95th percentile of each directed set, max over the two.
double hd95(const LabelMap& a, const LabelMap& b, int label);
// Mean over both directed sets pooled.
double assd(const LabelMap& a, const LabelMap& b, int label);
// Exact Hausdorff distance (max of both directions).
double hausdorff(const LabelMap& a, const LabelMap& b, int label);

double nearest_rank_percentile(std::vector<double> values, double q);

// Nearest-neighbour sampling at p + u(p), border clamp.
LabelMap warp_labels(const LabelMap& labels, const DisplacementField& field);

// Mean endpoint error over voxels where mask > 0 (all voxels if mask empty).
double endpoint_error(const DisplacementField& predicted, const DisplacementField& truth,
                      const LabelMap* mask = nullptr);

} // namespace recorr
