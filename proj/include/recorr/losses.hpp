#pragma once

#include <string>
#include <vector>

#include "recorr/autodiff.hpp"
#include "recorr/pyramid.hpp"
#include "recorr/volume.hpp"

namespace recorr {

enum class Similarity { mse, ncc };
enum class Supervision { full, last_of_scale };

std::string to_string(Similarity s);
std::string to_string(Supervision s);
Similarity similarity_from_string(const std::string& s);
Supervision supervision_from_string(const std::string& s);

struct LossConfig {
    Similarity similarity = Similarity::mse;
    int ncc_window = 9;
    double lambda = 0.02;
    double gamma = 0.7;
    Supervision supervision = Supervision::full;
    double dice_weight = 0.0;

    void validate() const;
};

namespace loss {

ad::Var mse(ad::Tape& t, ad::Var a, ad::Var b);

// 1 - mean over voxels of the squared local correlation
// cross^2 / (var_a * var_b + 1e-5) over window^3 neighbourhoods clipped to the
// grid (each window uses only in-bounds voxels).
ad::Var ncc(ad::Tape& t, ad::Var a, ad::Var b, int window = 9);

// Sum over axes of the mean squared forward difference (all components
// summed), divided by 3.
ad::Var grad_l2(ad::Tape& t, ad::Var field);

// 1 - mean over channels of (2 sum(a b) + 1) / (sum a + sum b + 1).
ad::Var dice_loss(ad::Tape& t, ad::Var warped, ad::Var fixed);

double mse(const Volume& a, const Volume& b);
double ncc(const Volume& a, const Volume& b, int window = 9);
double grad_l2(const Volume& field);
double dice_loss(const Volume& warped, const Volume& fixed);

} // namespace loss

// One channel per label 1..label_count-1 (background dropped).
Volume one_hot(const std::vector<int>& labels, Dims dims, int label_count);

// gamma^(T-1-i) for supervised field i, 0 for fields left out by the
// supervision mode. last_of_scale keeps the final field of every scale.
std::vector<double> sequence_weights(const std::vector<int>& scale_of, double gamma, Supervision mode);

struct LabelVars {
    ad::Var fixed;  // one-hot, constant
    ad::Var moving; // one-hot, constant; warped by each field
};

// L_single(phi) = sim(I_f, I_m o phi) + lambda * grad_l2(phi)
//                 [+ dice_weight * dice_loss(L_m o phi, L_f)].
ad::Var single_loss(ad::Tape& t, ad::Var field, ad::Var fixed, ad::Var moving, const LossConfig& cfg,
                    const LabelVars* labels = nullptr);

ad::Var sequence_loss(ad::Tape& t, const GraphTrace& trace, ad::Var fixed, ad::Var moving, const LossConfig& cfg,
                      const LabelVars* labels = nullptr);

} // namespace recorr
