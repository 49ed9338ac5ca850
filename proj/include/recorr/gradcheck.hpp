#pragma once

// Central finite-difference audit of the tape's analytic gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "recorr/autodiff.hpp"

namespace recorr::ad {

struct GradcheckOptions {
    double h = 1e-4;
    double tolerance = 1e-4;
    // Denominator floor of the relative error, so entries whose true
    // gradient is ~0 are judged by their absolute error instead.
    double floor = 1e-6;
    // A probe that fails at h is re-measured at h * retry_factor, centrally
    // and one-sided; a pass there means a non-differentiable point (lattice
    // line, leaky_relu hinge) sat inside the wider stencil. Such probes are
    // counted, not hidden.
    double retry_factor = 1e-2;
    // 0 checks every entry; otherwise a seeded random subset per tensor.
    std::size_t max_probes = 0;
    std::uint64_t seed = 0;
};

struct GradcheckReport {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t probes = 0;
    std::string worst; // "<tensor>[index]" of the largest error
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t kink_retries = 0;
    bool passed = true;
};

// Builds a scalar loss from the input leaves; may read params through t.param().
using GraphFn = std::function<Var(Tape& t, const std::vector<Var>& inputs)>;

// Probes every input volume and, if given, every entry of `params`.
GradcheckReport gradcheck(const std::string& name, const GraphFn& graph, std::vector<Volume> inputs,
                          ParamStore* params = nullptr, const GradcheckOptions& opt = {});

double relative_error(double analytic, double numeric, double floor);

} // namespace recorr::ad
