#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "recorr/autodiff.hpp"
#include "recorr/config.hpp"
#include "recorr/synthdata.hpp"

namespace recorr {

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;      // mean sequence loss over the training split
    double val_dice = -1.0; // mean Dice on validation, -1 when not validated this epoch
    double wall_seconds = 0.0;
    int clipped = 0;        // steps where the gradient norm was clipped
};

struct TrainResult {
    ad::ParamStore best;
    int best_epoch = 0;
    double best_val_dice = -1.0;
    std::vector<EpochRecord> epochs;
};

// Writes best.ckpt, last.ckpt, train_log.jsonl and resolved_config.json into
// out_dir. Progress lines go to `progress` when given.
TrainResult train(const Manifest& manifest, const RunConfig& cfg, const std::filesystem::path& out_dir,
                  std::ostream* progress = nullptr);

// Sequence loss of one pair under the current parameters; accumulates grads
// into `params` when `backward` is set.
double pair_loss(const PairSample& pair, ad::ParamStore& params, const RunConfig& cfg, bool backward);

// Per-pair Dice / HD95 / ASSD / fold fraction / endpoint error for the
// registration in `cfg` (learned mode needs params), alongside the
// unregistered baseline, with mean and std summaries.
nlohmann::json evaluate(const Manifest& manifest, const std::string& split, const RunConfig& cfg,
                        ad::ParamStore* params);

// Mean Dice of the registered validation pairs.
double validation_dice(const std::vector<PairSample>& pairs, ad::ParamStore& params, const RunConfig& cfg);

} // namespace recorr
