#pragma once

#include <array>
#include <utility>

#include "recorr/autodiff.hpp"
#include "recorr/model.hpp"
#include "recorr/volume.hpp"

namespace recorr {

// levels[i] sits at 1/2^(4-i) of the input resolution: 0 is the coarsest.
struct FeaturePyramid {
    std::array<Volume, 5> levels;
};

struct PyramidVars {
    std::array<ad::Var, 5> levels;
};

// Full-resolution stem then one stride-2 conv per level, each followed by
// leaky_relu. Input dims must be multiples of 16.
PyramidVars encode(ad::Tape& t, ad::Var image, ad::ParamStore& params, const ModelConfig& cfg);
FeaturePyramid encode(const Volume& image, ad::ParamStore& params, const ModelConfig& cfg);

// First half of the channels -> tanh -> h0, second half -> leaky_relu -> Fc.
struct ContextVars {
    ad::Var h0;
    ad::Var fc;
};
ContextVars split_context(ad::Tape& t, ad::Var features, double slope = 0.2);
std::pair<Volume, Volume> split_context(const Volume& features, double slope = 0.2);

// Direct mode: parameter-free 3x3x3 patch descriptors on a mean-pooled image
// pyramid. Each voxel's 27 values are made zero-mean and divided by
// max(norm, contrast_floor) / sqrt(27): textured patches score their cosine
// similarity, near-flat (noise-only) patches score close to 0 everywhere and
// so vote for no motion.
FeaturePyramid direct_features(const Volume& image, double contrast_floor);
Volume patch_descriptors(const Volume& image, double contrast_floor);

void require_multiple_of_16(Dims dims, const char* what);

} // namespace recorr
