#pragma once

#include "recorr/autodiff.hpp"
#include "recorr/model.hpp"

namespace recorr {

struct UpdaterState {
    ad::Var h;  // hidden, C/2 channels, in (-1, 1)
    ad::Var fc; // activated context, C/2 channels
    int scale = 0;
};

// Two conv3x3x3 + leaky_relu layers over concat(corr, field).
ad::Var motion_detect(ad::Tape& t, ad::Var corr, ad::Var field, ad::ParamStore& params, const ModelConfig& cfg,
                      int scale);

// One gated update on concat(h, m, Fc) with a single kernel orientation:
//   z = sigmoid(conv(., Wz)), r = sigmoid(conv(., Wr)),
//   h~ = tanh(conv([r*h, m, Fc], Wh)), h' = (1 - z) h + z h~.
ad::Var gru_cell(ad::Tape& t, ad::Var h, ad::Var m, ad::Var fc, ad::ParamStore& params, int scale, int orientation);

// Cells with 1x1x5, 1x5x1, 5x1x1 kernels applied one after another.
UpdaterState gru_step(ad::Tape& t, const UpdaterState& state, ad::Var m, ad::ParamStore& params);

// conv3x3x3 to a 3-channel residual field.
ad::Var head(ad::Tape& t, const UpdaterState& state, ad::ParamStore& params);

std::array<int, 3> gru_kernel(int orientation);

} // namespace recorr
