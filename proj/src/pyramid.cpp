#include "recorr/pyramid.hpp"

#include <cmath>

#include "recorr/encoder.hpp"
#include "recorr/local_search.hpp"
#include "recorr/synthdata.hpp"
#include "recorr/updater.hpp"

namespace recorr {

double mean_magnitude(const Volume& field) {
    require(field.channels() == 3, "mean_magnitude: field must have 3 channels");
    const std::size_t vox = field.channel_stride();
    const double* u = field.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < vox; ++i)
        acc += std::sqrt(u[i] * u[i] + u[vox + i] * u[vox + i] + u[2 * vox + i] * u[2 * vox + i]);
    return acc / static_cast<double>(vox);
}

DisplacementField exp_field(const VelocityField& v, int steps) {
    require(steps >= 1, "exp_field: steps must be >= 1");
    Volume u = v.volume();
    const double s = std::ldexp(1.0, -steps);
    for (double& x : u.values()) x *= s;
    DisplacementField field(std::move(u));
    for (int i = 0; i < steps; ++i) field = compose(field, field);
    return field;
}

ad::Var exp_field(ad::Tape& t, ad::Var v, int steps) {
    require(steps >= 1, "exp_field: steps must be >= 1");
    require(t.value(v).channels() == 3, "exp_field: velocity must have 3 channels");
    ad::Var u = ad::scale(t, v, std::ldexp(1.0, -steps));
    for (int i = 0; i < steps; ++i) u = ad::add(t, u, ad::warp(t, u, u));
    return u;
}

ad::Var upsample_field(ad::Tape& t, ad::Var field) {
    require(t.value(field).channels() == 3, "upsample_field: field must have 3 channels");
    return ad::scale(t, ad::upsample2(t, field), 2.0);
}

namespace {

void check_pair(const Volume& fixed, const Volume& moving) {
    require(fixed.channels() == 1 && moving.channels() == 1, "register: images must be single-channel");
    require(fixed.dims() == moving.dims(),
            "register: fixed dims " + to_string(fixed.dims()) + " != moving dims " + to_string(moving.dims()));
    require_multiple_of_16(fixed.dims(), "register");
}

double warped_mse(const Volume& fixed, const Volume& moving, const DisplacementField& field) {
    const Volume w = warp(moving, field);
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = w[i] - fixed[i];
        acc += d * d;
    }
    return acc / static_cast<double>(w.size());
}

DisplacementField to_full_resolution(DisplacementField f, int scale, bool diffeo, int exp_steps) {
    for (int s = scale; s < 4; ++s) f = upsample_field(f);
    return diffeo ? exp_field(f, exp_steps) : f;
}

void add_into(DisplacementField& acc, const DisplacementField& delta) {
    auto a = acc.volume().values();
    auto d = delta.volume().values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += d[i];
}

// Normalized convolution: each voxel's vote is weighted by the energy of its
// fixed descriptor, (1/C)|F_f|^2 in [0, 1], so textureless voxels inherit
// motion from textured neighbours instead of diluting it.
DisplacementField confidence_smooth(const DisplacementField& delta, const Volume& fixed_features, double sigma) {
    if (sigma <= 0.0) return delta;
    const std::size_t vox = delta.dims().voxels();
    const int c = fixed_features.channels();
    Volume w(1, delta.dims());
    for (int k = 0; k < c; ++k) {
        const double* f = fixed_features.data() + k * vox;
        for (std::size_t i = 0; i < vox; ++i) w[i] += f[i] * f[i] / c;
    }
    Volume wd(3, delta.dims());
    for (int a = 0; a < 3; ++a)
        for (std::size_t i = 0; i < vox; ++i) wd[a * vox + i] = w[i] * delta.volume()[a * vox + i];
    const Volume sw = gaussian_smooth(w, sigma);
    Volume out = gaussian_smooth(wd, sigma);
    for (int a = 0; a < 3; ++a)
        for (std::size_t i = 0; i < vox; ++i) out[a * vox + i] = sw[i] > 1e-12 ? out[a * vox + i] / sw[i] : 0.0;
    return DisplacementField(std::move(out));
}

// Symmetric residual: half the forward estimate (fixed searching the warped
// moving features) minus the reverse one (warped moving searching the fixed
// features). Biases that both directions share, from the zero-padded border
// shifts or the asymmetry of neighbouring descriptors, cancel; an identical
// pair gives exactly zero.
DisplacementField direct_residual(const Volume& fixed_features, const Volume& moving_features,
                                  const DisplacementField& warp_by, const ModelConfig& cfg) {
    const Volume warped = warp(moving_features, warp_by);
    const DisplacementField zero(fixed_features.dims());
    const DisplacementField fwd = soft_argmax(local_search(fixed_features, warped, zero, cfg.radius), cfg.temperature);
    const DisplacementField rev = soft_argmax(local_search(warped, fixed_features, zero, cfg.radius), cfg.temperature);
    Volume d = fwd.volume();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.5 * (d[i] - rev.volume()[i]);
    return confidence_smooth(DisplacementField(std::move(d)), fixed_features, cfg.direct_smoothing);
}

// Direct mode: descriptor features, soft_argmax updates, no parameters.
RegistrationTrace register_direct(const Volume& fixed, const Volume& moving, const ModelConfig& cfg) {
    const FeaturePyramid ff = direct_features(fixed, cfg.direct_contrast_floor);
    const FeaturePyramid fm = direct_features(moving, cfg.direct_contrast_floor);
    const bool diffeo = cfg.variant == Variant::diffeo;
    RegistrationTrace trace;

    auto step = [&](DisplacementField& acc, int level, int iteration) {
        const DisplacementField warp_by = diffeo ? exp_field(acc, cfg.exp_steps) : acc;
        const DisplacementField delta = direct_residual(ff.levels[level], fm.levels[level], warp_by, cfg);
        add_into(acc, delta);
        trace.fields.push_back(to_full_resolution(acc, level, diffeo, cfg.exp_steps));
        trace.diagnostics.push_back({level, iteration, mean_magnitude(delta.volume()), 0.0});
    };

    DisplacementField acc(ff.levels[0].dims());
    for (int s = 0; s < 4; ++s) {
        if (s > 0) acc = upsample_field(acc);
        for (int it = 0; it < cfg.schedule.iterations[s]; ++it) step(acc, s, it);
    }
    acc = upsample_field(acc);
    if (cfg.schedule.refine) step(acc, 4, 0);
    return trace;
}

} // namespace

GraphTrace register_graph(ad::Tape& t, ad::Var fixed, ad::Var moving, ad::ParamStore& params, const ModelConfig& cfg) {
    cfg.validate();
    require(cfg.mode == Mode::learned, "register_graph: learned mode only");
    check_pair(t.value(fixed), t.value(moving));
    const PyramidVars ff = encode(t, fixed, params, cfg);
    const PyramidVars fm = encode(t, moving, params, cfg);
    const bool diffeo = cfg.variant == Variant::diffeo;
    GraphTrace out;

    auto to_full = [&](ad::Var f, int scale) {
        for (int s = scale; s < 4; ++s) f = upsample_field(t, f);
        return diffeo ? exp_field(t, f, cfg.exp_steps) : f;
    };

    ad::Var acc;
    for (int s = 0; s < 4; ++s) {
        acc = s == 0 ? t.constant(Volume(3, t.value(ff.levels[0]).dims())) : upsample_field(t, acc);
        if (cfg.schedule.iterations[s] == 0) continue;
        const ContextVars ctx = split_context(t, ff.levels[s], cfg.leaky_slope);
        UpdaterState state{ctx.h0, ctx.fc, s};
        for (int it = 0; it < cfg.schedule.iterations[s]; ++it) {
            const ad::Var warp_by = diffeo ? exp_field(t, acc, cfg.exp_steps) : acc;
            const ad::Var corr = local_search(t, ff.levels[s], fm.levels[s], warp_by, cfg.radius);
            const ad::Var m = motion_detect(t, corr, acc, params, cfg, s);
            state = gru_step(t, state, m, params);
            const ad::Var delta = head(t, state, params);
            acc = ad::add(t, acc, delta);
            out.fields.push_back(to_full(acc, s));
            out.scale_of.push_back(s);
            out.mean_update.push_back(mean_magnitude(t.value(delta)));
        }
    }

    if (cfg.schedule.refine) {
        ad::Var full = upsample_field(t, acc);
        const ad::Var warp_by = diffeo ? exp_field(t, full, cfg.exp_steps) : full;
        auto P = [&](int layer, char kind) { return t.param(params.get(names::refine(layer, kind))); };
        ad::Var x = ad::concat(t, {ff.levels[4], ad::warp(t, fm.levels[4], warp_by), full});
        x = ad::leaky_relu(t, ad::conv3d(t, x, P(1, 'w'), P(1, 'b'), cfg.refine_channels, {3, 3, 3}),
                           cfg.leaky_slope);
        const ad::Var delta = ad::conv3d(t, x, P(2, 'w'), P(2, 'b'), 3, {3, 3, 3});
        full = ad::add(t, full, delta);
        out.fields.push_back(diffeo ? exp_field(t, full, cfg.exp_steps) : full);
        out.scale_of.push_back(4);
        out.mean_update.push_back(mean_magnitude(t.value(delta)));
    }
    return out;
}

RegistrationTrace register_images(const Volume& fixed, const Volume& moving, ad::ParamStore* params,
                                  const ModelConfig& cfg) {
    cfg.validate();
    check_pair(fixed, moving);
    RegistrationTrace trace;
    if (cfg.mode == Mode::direct) {
        trace = register_direct(fixed, moving, cfg);
    } else {
        require(params != nullptr, "register: learned mode needs parameters");
        ad::Tape t;
        const GraphTrace g = register_graph(t, t.input(fixed, false), t.input(moving, false), *params, cfg);
        for (std::size_t k = 0; k < g.fields.size(); ++k) {
            trace.fields.emplace_back(t.value(g.fields[k]));
            trace.diagnostics.push_back({g.scale_of[k], 0, g.mean_update[k], 0.0});
        }
        for (std::size_t k = 1; k < trace.diagnostics.size(); ++k)
            if (trace.diagnostics[k].scale == trace.diagnostics[k - 1].scale)
                trace.diagnostics[k].iteration = trace.diagnostics[k - 1].iteration + 1;
    }
    for (std::size_t k = 0; k < trace.fields.size(); ++k)
        trace.diagnostics[k].similarity = warped_mse(fixed, moving, trace.fields[k]);
    for (const auto& f : trace.fields)
        if (!f.volume().all_finite()) throw NumericalError("register: non-finite displacement");
    trace.final_field = trace.fields.back();
    return trace;
}

DisplacementField single_scale_search(const Volume& fixed, const Volume& moving, int level, const ModelConfig& cfg) {
    check_pair(fixed, moving);
    require(level >= 0 && level <= 4, "single_scale_search: level must be in [0, 4]");
    Volume f = fixed, m = moving;
    for (int s = 4; s > level; --s) {
        f = downsample_volume(f);
        m = downsample_volume(m);
    }
    const Volume pf = patch_descriptors(f, cfg.direct_contrast_floor), pm = patch_descriptors(m, cfg.direct_contrast_floor);
    DisplacementField u = direct_residual(pf, pm, DisplacementField(pf.dims()), cfg);
    return to_full_resolution(std::move(u), level, false, 1);
}

} // namespace recorr
