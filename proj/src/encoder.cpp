#include "recorr/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace recorr {

void require_multiple_of_16(Dims dims, const char* what) {
    require(dims.d % 16 == 0 && dims.h % 16 == 0 && dims.w % 16 == 0,
            std::string(what) + ": dims " + to_string(dims) + " are not multiples of 16 (pad beforehand)");
}

PyramidVars encode(ad::Tape& t, ad::Var image, ad::ParamStore& params, const ModelConfig& cfg) {
    const Volume& img = t.value(image);
    require(img.channels() == 1, "encode: image must be single-channel");
    require_multiple_of_16(img.dims(), "encode");
    PyramidVars out;
    auto layer = [&](ad::Var x, int level, int stride) {
        ad::Var w = t.param(params.get(names::encoder_weight(level)));
        ad::Var b = t.param(params.get(names::encoder_bias(level)));
        return ad::leaky_relu(t, ad::conv3d(t, x, w, b, cfg.level_channels(level), {3, 3, 3}, stride), cfg.leaky_slope);
    };
    out.levels[4] = layer(image, 4, 1);
    for (int level = 3; level >= 0; --level) out.levels[level] = layer(out.levels[level + 1], level, 2);
    return out;
}

FeaturePyramid encode(const Volume& image, ad::ParamStore& params, const ModelConfig& cfg) {
    ad::Tape t;
    const PyramidVars vars = encode(t, t.input(image, false), params, cfg);
    FeaturePyramid out;
    for (int i = 0; i < 5; ++i) out.levels[i] = t.value(vars.levels[i]);
    return out;
}

ContextVars split_context(ad::Tape& t, ad::Var features, double slope) {
    const int c = t.value(features).channels();
    require(c % 2 == 0, "split_context: channel count must be even, got " + std::to_string(c));
    return {ad::tanh(t, ad::split(t, features, 0, c / 2)), ad::leaky_relu(t, ad::split(t, features, c / 2, c), slope)};
}

std::pair<Volume, Volume> split_context(const Volume& features, double slope) {
    ad::Tape t;
    const ContextVars v = split_context(t, t.input(features, false), slope);
    return {t.value(v.h0), t.value(v.fc)};
}

Volume patch_descriptors(const Volume& image, double contrast_floor) {
    require(image.channels() == 1, "patch_descriptors: image must be single-channel");
    const Dims d = image.dims();
    const std::size_t vox = d.voxels();
    Volume out(27, d, image.spacing());
    auto clampi = [](int v, int n) { return std::min(std::max(v, 0), n - 1); };
    const double target = std::sqrt(27.0);
#pragma omp parallel for schedule(static)
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                std::array<double, 27> p{};
                double mean = 0.0;
                int k = 0;
                for (int a = -1; a <= 1; ++a)
                    for (int b = -1; b <= 1; ++b)
                        for (int c = -1; c <= 1; ++c, ++k) {
                            p[k] = image.at(0, clampi(z + a, d.d), clampi(y + b, d.h), clampi(x + c, d.w));
                            mean += p[k];
                        }
                mean /= 27.0;
                double norm = 0.0;
                for (double& v : p) {
                    v -= mean;
                    norm += v * v;
                }
                norm = std::sqrt(norm);
                const double denom = std::max(norm, contrast_floor);
                const double s = denom > 1e-12 ? target / denom : 0.0;
                const std::size_t i = (static_cast<std::size_t>(z) * d.h + y) * d.w + x;
                for (int c = 0; c < 27; ++c) out[c * vox + i] = p[c] * s;
            }
    return out;
}

FeaturePyramid direct_features(const Volume& image, double contrast_floor) {
    require(image.channels() == 1, "direct_features: image must be single-channel");
    require_multiple_of_16(image.dims(), "direct_features");
    FeaturePyramid out;
    Volume level = image;
    for (int i = 4; i >= 0; --i) {
        out.levels[i] = patch_descriptors(level, contrast_floor);
        if (i > 0) level = downsample_volume(level);
    }
    return out;
}

} // namespace recorr
