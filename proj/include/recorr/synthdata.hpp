#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "recorr/metrics.hpp"
#include "recorr/volume.hpp"

namespace recorr {

struct PhantomSpec {
    std::uint64_t seed = 0;
    Dims dims{32, 32, 32};
    int label_count = 4;      // background + 3 ellipsoids
    double noise_sigma = 0.02;
    double smoothing = 0.7;   // Gaussian sigma in voxels, 0 disables
    double texture = 0.12;    // amplitude of the in-region intensity texture

    void validate() const;
};

struct Phantom {
    Volume image;
    LabelMap labels;
};

Phantom make_phantom(const PhantomSpec& spec);

enum class PerturbKind { none, svf, affine_offset, affine_scale, translation };

std::string to_string(PerturbKind k);
PerturbKind perturb_kind_from_string(const std::string& s);

struct PerturbSpec {
    PerturbKind kind = PerturbKind::svf;
    int svf_factor = 4;       // velocity drawn at dims / s
    double magnitude = 4.0;   // svf: max |v| in voxels; offset: fraction of W; scale: x-factor delta
    std::array<double, 3> translation{0.0, 0.0, 0.0}; // voxels, (z, y, x)
    std::uint64_t seed = 0;

    void validate() const;
};

// I_m(p) = I_f(phi^-1(p)), so warping I_m by true_field recovers I_f up to
// interpolation: true_field maps fixed coordinates to moving coordinates.
struct PairSample {
    Volume fixed;
    Volume moving;
    LabelMap labels_fixed;
    LabelMap labels_moving;
    DisplacementField true_field;
    double applied_magnitude = 0.0; // svf magnitude after any fold-driven shrink
};

PairSample make_pair(const Volume& image, const LabelMap& labels, const PerturbSpec& perturb);

// Separable Gaussian blur, border clamp. Applied per channel.
Volume gaussian_smooth(const Volume& v, double sigma);

// ---- datasets on disk ------------------------------------------------------

struct DatasetSpec {
    std::uint64_t seed = 0;
    int train = 40;
    int validation = 4;
    int test = 8;
    PhantomSpec phantom{};
    PerturbSpec perturb{};
};

// Echoed into the manifest; parsing lives with the run config.
nlohmann::json to_json(const DatasetSpec& spec);

struct ManifestEntry {
    std::string id;
    std::string split; // "train" | "validation" | "test"
    std::filesystem::path fixed, moving, labels_fixed, labels_moving, true_field;
    std::uint64_t phantom_seed = 0;
    std::uint64_t perturb_seed = 0;
    double applied_magnitude = 0.0;
};

struct Manifest {
    std::filesystem::path path;
    nlohmann::json spec;
    std::vector<ManifestEntry> entries;

    std::vector<const ManifestEntry*> split(const std::string& name) const;
};

// Writes every pair as .vol3 files plus manifest.json into `dir`.
Manifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);
Manifest read_manifest(const std::filesystem::path& path);

PairSample load_pair(const ManifestEntry& entry);

} // namespace recorr
