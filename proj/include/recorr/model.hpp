#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "recorr/autodiff.hpp"

namespace recorr {

enum class Mode { learned, direct };
enum class Variant { standard, diffeo };

std::string to_string(Mode m);
std::string to_string(Variant v);

// Iterations per coarse-to-fine scale 0..3 (1/16 .. 1/2) plus the
// full-resolution refinement switch.
struct IterationSchedule {
    std::array<int, 4> iterations{3, 3, 2, 2};
    bool refine = true;

    int total_iterations() const { return iterations[0] + iterations[1] + iterations[2] + iterations[3]; }
    // Number of supervised fields in a trace.
    int trace_length() const { return total_iterations() + (refine ? 1 : 0); }
    void validate() const;
};

struct ModelConfig {
    // Feature widths listed from full resolution (level 4) down to 1/16 (level 0).
    std::array<int, 5> encoder_channels{8, 16, 16, 32, 32};
    int radius = 3;
    int motion_channels = 16;
    int refine_channels = 8;
    double leaky_slope = 0.2;
    double temperature = 0.1; // direct mode only
    double direct_contrast_floor = 0.5; // direct mode descriptor floor
    double direct_smoothing = 1.0;      // direct mode residual Gaussian sigma (voxels), 0 disables
    int exp_steps = 5;        // scaling-and-squaring squarings
    IterationSchedule schedule{};
    Mode mode = Mode::learned;
    Variant variant = Variant::standard;

    int level_channels(int level) const { return encoder_channels[4 - level]; }
    int hidden_channels(int level) const { return level_channels(level) / 2; }
    void validate() const;
};

// Allocates every encoder, updater (all four scales) and refinement entry.
// Weights draw from a seeded He-style uniform; biases start at zero; the
// updater heads and the last refinement conv start at zero so the untrained
// network emits the identity deformation.
ad::ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

// Parameter names, kept in one place so the modules agree.
namespace names {
std::string encoder_weight(int level);
std::string encoder_bias(int level);
std::string motion(int scale, int layer, char kind);           // kind 'w' | 'b'
std::string gru(int scale, int orientation, char gate, char kind); // gate 'z' | 'r' | 'h'
std::string head(int scale, char kind);
std::string refine(int layer, char kind);
} // namespace names

} // namespace recorr
