#pragma once

#include "recorr/autodiff.hpp"
#include "recorr/volume.hpp"

namespace recorr {

// r^3 channels at the dims of the current scale; channel k holds the score of
// offset kernels::correlation_offset(r, k).
using CorrelationVolume = Volume;

// Warp F_m by the field (border clamp), zero-pad and shift it over the r^3
// integer offsets, and score each shift by (1/C) <F_f, shifted>.
ad::Var local_search(ad::Tape& t, ad::Var fixed, ad::Var moving, ad::Var field, int r);
CorrelationVolume local_search(const Volume& fixed, const Volume& moving, const DisplacementField& field, int r);

// Radius implied by a correlation volume's channel count.
int search_radius(const CorrelationVolume& corr);

// Per voxel softmax(corr / temperature) over the offsets, then the expected
// offset, as a residual displacement at the current scale.
DisplacementField soft_argmax(const CorrelationVolume& corr, double temperature);

} // namespace recorr
