#pragma once

#include <vector>

#include "recorr/autodiff.hpp"
#include "recorr/model.hpp"
#include "recorr/volume.hpp"

namespace recorr {

struct IterationDiagnostics {
    int scale = 0;         // 0..3, or 4 for the full-resolution refinement
    int iteration = 0;     // within the scale
    double mean_update = 0.0; // mean |delta| in voxels of that scale
    double similarity = 0.0;  // MSE(I_f, I_m o phi_t) at full resolution
};

struct RegistrationTrace {
    std::vector<DisplacementField> fields; // full resolution, one per supervised output
    DisplacementField final_field;
    std::vector<IterationDiagnostics> diagnostics;
};

// Graph form for training: every supervised field as a tape node.
struct GraphTrace {
    std::vector<ad::Var> fields;
    std::vector<int> scale_of;
    std::vector<double> mean_update;
};

// Learned mode only. Inputs are single-channel leaves of equal dims
// (multiples of 16).
GraphTrace register_graph(ad::Tape& t, ad::Var fixed, ad::Var moving, ad::ParamStore& params, const ModelConfig& cfg);

// Learned mode needs params; direct mode ignores them (may be null).
RegistrationTrace register_images(const Volume& fixed, const Volume& moving, ad::ParamStore* params,
                                  const ModelConfig& cfg);

// Scaling and squaring: u = v / 2^steps, then `steps` self-compositions.
DisplacementField exp_field(const VelocityField& v, int steps = 5);
ad::Var exp_field(ad::Tape& t, ad::Var v, int steps = 5);

// upsample_field on the tape: x2 grid, x2 vectors.
ad::Var upsample_field(ad::Tape& t, ad::Var field);

// One direct-mode search from the zero field at a single pyramid level,
// upsampled to full resolution. The non-hierarchical baseline for the
// relocation claim.
DisplacementField single_scale_search(const Volume& fixed, const Volume& moving, int level, const ModelConfig& cfg);

double mean_magnitude(const Volume& field);

} // namespace recorr
