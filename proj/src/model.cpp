#include "recorr/model.hpp"

#include <cmath>

#include "recorr/rng.hpp"

namespace recorr {

std::string to_string(Mode m) { return m == Mode::learned ? "learned" : "direct"; }
std::string to_string(Variant v) { return v == Variant::standard ? "standard" : "diffeo"; }

void IterationSchedule::validate() const {
    for (int t : iterations) require(t >= 0, "schedule: iteration counts must be non-negative");
    require(total_iterations() >= 1, "schedule: at least one iteration is required");
}

void ModelConfig::validate() const {
    for (int level = 0; level < 5; ++level) {
        require(level_channels(level) >= 1, "encoder.channels: widths must be positive");
        if (level < 4) require(level_channels(level) % 2 == 0, "encoder.channels: iterated levels need even widths");
    }
    require(radius >= 1 && radius % 2 == 1, "search.radius must be odd and >= 1");
    require(motion_channels >= 1, "updater.motion_channels must be positive");
    require(refine_channels >= 1, "refine channels must be positive");
    require(temperature > 0.0, "search.temperature must be positive");
    require(direct_contrast_floor >= 0.0 && direct_smoothing >= 0.0, "direct-mode floor/smoothing must be >= 0");
    require(exp_steps >= 1, "exp_steps must be >= 1");
    schedule.validate();
}

namespace names {

std::string encoder_weight(int level) { return "encoder.level" + std::to_string(level) + ".w"; }
std::string encoder_bias(int level) { return "encoder.level" + std::to_string(level) + ".b"; }
std::string motion(int scale, int layer, char kind) {
    return "scale" + std::to_string(scale) + ".motion" + std::to_string(layer) + "." + kind;
}
std::string gru(int scale, int orientation, char gate, char kind) {
    return "scale" + std::to_string(scale) + ".gru" + std::to_string(orientation) + "." + gate + "." + kind;
}
std::string head(int scale, char kind) { return "scale" + std::to_string(scale) + ".head." + kind; }
std::string refine(int layer, char kind) { return "refine.conv" + std::to_string(layer) + "." + kind; }

} // namespace names

namespace {

constexpr std::array<std::array<int, 3>, 3> kGruKernels = {{{1, 1, 5}, {1, 5, 1}, {5, 1, 1}}};

void add_conv(ad::ParamStore& store, Rng& rng, const std::string& w, const std::string& b, int out, int in,
              std::array<int, 3> k, double gain) {
    ad::Param& wp = store.add(w, {out, in, k[0], k[1], k[2]});
    store.add(b, {out});
    const double fan_in = static_cast<double>(in) * k[0] * k[1] * k[2];
    const double bound = gain * std::sqrt(3.0 / fan_in);
    for (double& v : wp.value) v = rng.uniform(-bound, bound);
}

} // namespace

ad::ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ad::ParamStore store;
    Rng rng(seed);
    const double leaky_gain = std::sqrt(2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope));

    // level 4 is the full-resolution stem, each coarser level one stride-2 conv
    add_conv(store, rng, names::encoder_weight(4), names::encoder_bias(4), cfg.level_channels(4), 1, {3, 3, 3},
             leaky_gain);
    for (int level = 3; level >= 0; --level)
        add_conv(store, rng, names::encoder_weight(level), names::encoder_bias(level), cfg.level_channels(level),
                 cfg.level_channels(level + 1), {3, 3, 3}, leaky_gain);

    const int taps = cfg.radius * cfg.radius * cfg.radius;
    for (int s = 0; s < 4; ++s) {
        const int hid = cfg.hidden_channels(s);
        const int gru_in = hid + cfg.motion_channels + hid;
        add_conv(store, rng, names::motion(s, 1, 'w'), names::motion(s, 1, 'b'), cfg.motion_channels, taps + 3,
                 {3, 3, 3}, leaky_gain);
        add_conv(store, rng, names::motion(s, 2, 'w'), names::motion(s, 2, 'b'), cfg.motion_channels,
                 cfg.motion_channels, {3, 3, 3}, leaky_gain);
        for (int o = 0; o < 3; ++o)
            for (char gate : {'z', 'r', 'h'})
                add_conv(store, rng, names::gru(s, o, gate, 'w'), names::gru(s, o, gate, 'b'), hid, gru_in,
                         kGruKernels[o], 1.0);
        store.add(names::head(s, 'w'), {3, hid, 3, 3, 3});
        store.add(names::head(s, 'b'), {3});
    }

    add_conv(store, rng, names::refine(1, 'w'), names::refine(1, 'b'), cfg.refine_channels,
             2 * cfg.level_channels(4) + 3, {3, 3, 3}, leaky_gain);
    store.add(names::refine(2, 'w'), {3, cfg.refine_channels, 3, 3, 3});
    store.add(names::refine(2, 'b'), {3});

    store.round_to_storage();
    return store;
}

} // namespace recorr
