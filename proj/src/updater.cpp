#include "recorr/updater.hpp"

namespace recorr {

std::array<int, 3> gru_kernel(int orientation) {
    switch (orientation) {
    case 0: return {1, 1, 5};
    case 1: return {1, 5, 1};
    case 2: return {5, 1, 1};
    }
    throw ContractError("gru orientation must be 0, 1 or 2");
}

ad::Var motion_detect(ad::Tape& t, ad::Var corr, ad::Var field, ad::ParamStore& params, const ModelConfig& cfg,
                      int scale) {
    require(t.value(corr).dims() == t.value(field).dims(), "motion_detect: corr and field dims differ");
    require(t.value(field).channels() == 3, "motion_detect: field must have 3 channels");
    auto P = [&](int layer, char kind) { return t.param(params.get(names::motion(scale, layer, kind))); };
    ad::Var x = ad::concat(t, {corr, field});
    x = ad::leaky_relu(t, ad::conv3d(t, x, P(1, 'w'), P(1, 'b'), cfg.motion_channels, {3, 3, 3}), cfg.leaky_slope);
    return ad::leaky_relu(t, ad::conv3d(t, x, P(2, 'w'), P(2, 'b'), cfg.motion_channels, {3, 3, 3}),
                          cfg.leaky_slope);
}

ad::Var gru_cell(ad::Tape& t, ad::Var h, ad::Var m, ad::Var fc, ad::ParamStore& params, int scale, int orientation) {
    const Volume& hv = t.value(h);
    require(hv.dims() == t.value(m).dims() && hv.dims() == t.value(fc).dims(), "gru: dims differ");
    require(hv.channels() == t.value(fc).channels(), "gru: hidden and context channel counts differ");
    const int hid = hv.channels();
    const auto k = gru_kernel(orientation);
    auto gate = [&](ad::Var in, char g) {
        return ad::conv3d(t, in, t.param(params.get(names::gru(scale, orientation, g, 'w'))),
                          t.param(params.get(names::gru(scale, orientation, g, 'b'))), hid, k);
    };
    ad::Var hx = ad::concat(t, {h, m, fc});
    ad::Var z = ad::sigmoid(t, gate(hx, 'z'));
    ad::Var r = ad::sigmoid(t, gate(hx, 'r'));
    ad::Var cand = ad::tanh(t, gate(ad::concat(t, {ad::mul(t, r, h), m, fc}), 'h'));
    return ad::blend(t, z, h, cand);
}

UpdaterState gru_step(ad::Tape& t, const UpdaterState& state, ad::Var m, ad::ParamStore& params) {
    UpdaterState next = state;
    for (int o = 0; o < 3; ++o) next.h = gru_cell(t, next.h, m, state.fc, params, state.scale, o);
    return next;
}

ad::Var head(ad::Tape& t, const UpdaterState& state, ad::ParamStore& params) {
    return ad::conv3d(t, state.h, t.param(params.get(names::head(state.scale, 'w'))),
                      t.param(params.get(names::head(state.scale, 'b'))), 3, {3, 3, 3});
}

} // namespace recorr
