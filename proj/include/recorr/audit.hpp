#pragma once

#include <cstdint>
#include <vector>

#include "recorr/gradcheck.hpp"

namespace recorr {

// Finite-difference audit of every tape op, every loss, exp_field, and the
// composed learned network (2 scales, 8^3 content padded to the 16^3 grid the
// encoder needs, label-supervised sequence loss). Parameters of the network
// are drawn at random, heads included, so no gradient path is trivially zero.
std::vector<ad::GradcheckReport> gradient_audit(std::uint64_t seed);

} // namespace recorr
