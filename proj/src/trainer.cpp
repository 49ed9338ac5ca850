#include "recorr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "recorr/losses.hpp"
#include "recorr/pyramid.hpp"
#include "recorr/rng.hpp"

namespace recorr {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<PairSample> load_split(const Manifest& m, const std::string& name, std::vector<std::string>* ids) {
    std::vector<PairSample> out;
    for (const ManifestEntry* e : m.split(name)) {
        out.push_back(load_pair(*e));
        if (ids) ids->push_back(e->id);
    }
    return out;
}

void write_json(const fs::path& path, const json& doc) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << doc.dump(2) << "\n";
}

json stats(const std::vector<double>& xs) {
    if (xs.empty()) return {{"mean", nullptr}, {"std", nullptr}, {"n", 0}};
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return {{"mean", mean}, {"std", std::sqrt(var / xs.size())}, {"n", xs.size()}};
}

// Metrics of one warped pair. Surface distances skip labels absent from
// either map after warping.
json pair_metrics(const PairSample& p, const DisplacementField& field) {
    const LabelMap warped = warp_labels(p.labels_moving, field);
    const DiceScores d = dice(warped, p.labels_fixed);
    json dice_j = json::object(), hd_j = json::object(), assd_j = json::object();
    std::vector<double> hds, assds;
    for (const auto& [label, score] : d.per_label) {
        dice_j[std::to_string(label)] = score;
        if (warped.count(label) == 0 || p.labels_fixed.count(label) == 0) continue;
        const double h = hd95(warped, p.labels_fixed, label), a = assd(warped, p.labels_fixed, label);
        hd_j[std::to_string(label)] = h;
        assd_j[std::to_string(label)] = a;
        hds.push_back(h);
        assds.push_back(a);
    }
    auto mean = [](const std::vector<double>& v) {
        return v.empty() ? json(nullptr) : json(std::accumulate(v.begin(), v.end(), 0.0) / v.size());
    };
    return {{"dice", dice_j},
            {"dice_mean", d.mean},
            {"hd95", hd_j},
            {"hd95_mean", mean(hds)},
            {"assd", assd_j},
            {"assd_mean", mean(assds)},
            {"fold_fraction", fold_fraction(jacobian_det(field))},
            {"epe", endpoint_error(field, p.true_field)},
            {"epe_foreground", endpoint_error(field, p.true_field, &p.labels_fixed)}};
}


} // namespace

double pair_loss(const PairSample& pair, ad::ParamStore& params, const RunConfig& cfg, bool backward) {
    ad::Tape t;
    const ad::Var fixed = t.input(pair.fixed, false);
    const ad::Var moving = t.input(pair.moving, false);
    const GraphTrace trace = register_graph(t, fixed, moving, params, cfg.model);
    LabelVars labels;
    const LabelVars* lp = nullptr;
    if (cfg.loss.dice_weight > 0.0) {
        const int k = cfg.data.phantom.label_count;
        labels.fixed = t.constant(one_hot(pair.labels_fixed.values(), pair.fixed.dims(), k));
        labels.moving = t.constant(one_hot(pair.labels_moving.values(), pair.fixed.dims(), k));
        lp = &labels;
    }
    const ad::Var loss = sequence_loss(t, trace, fixed, moving, cfg.loss, lp);
    const double value = t.value(loss)[0];
    if (backward && std::isfinite(value)) t.backward(loss);
    return value;
}

double validation_dice(const std::vector<PairSample>& pairs, ad::ParamStore& params, const RunConfig& cfg) {
    double acc = 0.0;
    for (const PairSample& p : pairs) {
        const RegistrationTrace r = register_images(p.fixed, p.moving, &params, cfg.model);
        acc += dice(warp_labels(p.labels_moving, r.final_field), p.labels_fixed).mean;
    }
    return pairs.empty() ? 0.0 : acc / pairs.size();
}

TrainResult train(const Manifest& manifest, const RunConfig& cfg, const fs::path& out_dir, std::ostream* progress) {
    cfg.validate();
    require(cfg.model.mode == Mode::learned, "train: learned mode only");
    std::vector<std::string> ids;
    const std::vector<PairSample> train_pairs = load_split(manifest, "train", &ids);
    const std::vector<PairSample> val_pairs = load_split(manifest, "validation", nullptr);
    if (train_pairs.empty()) throw DataError("train: manifest has no train pairs");
    if (val_pairs.empty()) throw DataError("train: manifest has no validation pairs");

    fs::create_directories(out_dir);
    write_json(out_dir / "resolved_config.json", to_json(cfg));
    std::ofstream log(out_dir / "train_log.jsonl");
    if (!log) throw DataError("cannot open " + (out_dir / "train_log.jsonl").string());

    Rng rng(cfg.seed);
    ad::ParamStore params = init_params(cfg.model, rng.next());
    Rng shuffle = rng.split(1);
    const ad::AdamWConfig opt{cfg.train.lr, 0.9, 0.999, 1e-8, cfg.train.weight_decay};

    TrainResult result;
    result.best = params;
    std::vector<std::size_t> order(train_pairs.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.next() % i]);
        EpochRecord rec;
        rec.epoch = epoch;
        for (std::size_t idx : order) {
            params.zero_grad();
            const double loss = pair_loss(train_pairs[idx], params, cfg, true);
            if (!std::isfinite(loss))
                throw NumericalError("train: non-finite loss on pair " + ids[idx] + " in epoch " + std::to_string(epoch));
            const double norm = params.grad_norm();
            if (!std::isfinite(norm))
                throw NumericalError("train: non-finite gradient on pair " + ids[idx] + " in epoch " +
                                     std::to_string(epoch));
            if (cfg.train.clip_norm > 0.0 && norm > cfg.train.clip_norm) {
                params.scale_grad(cfg.train.clip_norm / norm);
                ++rec.clipped;
            }
            ad::adamw_step(params, opt);
            rec.loss += loss;
        }
        rec.loss /= train_pairs.size();

        const bool validate = epoch % cfg.train.validate_every == 0 || epoch == cfg.train.epochs;
        if (validate) {
            rec.val_dice = validation_dice(val_pairs, params, cfg);
            if (rec.val_dice > result.best_val_dice) {
                result.best_val_dice = rec.val_dice;
                result.best_epoch = epoch;
                result.best = params;
                save_checkpoint(out_dir / "best.ckpt", params);
            }
        }
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        json line = {{"epoch", epoch}, {"loss", rec.loss}, {"wall_seconds", rec.wall_seconds},
                     {"clipped", rec.clipped}, {"seed", cfg.seed}};
        line["val_dice"] = validate ? json(rec.val_dice) : json(nullptr);
        log << line.dump() << "\n" << std::flush;
        if (progress)
            *progress << "epoch " << epoch << " loss " << rec.loss
                      << (validate ? " val_dice " + std::to_string(rec.val_dice) : std::string())
                      << " clipped " << rec.clipped << " (" << rec.wall_seconds << " s)\n"
                      << std::flush;
        result.epochs.push_back(rec);
    }
    save_checkpoint(out_dir / "last.ckpt", params);
    return result;
}

json evaluate(const Manifest& manifest, const std::string& split, const RunConfig& cfg, ad::ParamStore* params) {
    cfg.validate();
    const auto entries = manifest.split(split);
    if (entries.empty()) throw DataError("evaluate: split '" + split + "' is empty");
    if (cfg.model.mode == Mode::learned && params == nullptr)
        throw ContractError("evaluate: learned mode needs a checkpoint");

    static const char* kSummary[] = {"dice_mean", "hd95_mean", "assd_mean", "fold_fraction", "epe", "epe_foreground"};
    std::map<std::string, std::vector<double>> reg, base;
    json pairs = json::array();
    for (const ManifestEntry* e : entries) {
        const PairSample p = load_pair(*e);
        const RegistrationTrace r = register_images(p.fixed, p.moving, params, cfg.model);
        json m = pair_metrics(p, r.final_field);
        json b = pair_metrics(p, DisplacementField(p.fixed.dims()));
        for (const char* k : kSummary) {
            if (!m[k].is_null()) reg[k].push_back(m[k].get<double>());
            if (!b[k].is_null()) base[k].push_back(b[k].get<double>());
        }
        m["id"] = e->id;
        m["baseline"] = b;
        pairs.push_back(std::move(m));
    }
    json summary = json::object(), baseline = json::object();
    for (const char* k : kSummary) {
        summary[k] = stats(reg[k]);
        baseline[k] = stats(base[k]);
    }
    return {{"seed", cfg.seed},
            {"split", split},
            {"mode", to_string(cfg.model.mode)},
            {"variant", to_string(cfg.model.variant)},
            {"pairs", pairs},
            {"summary", summary},
            {"baseline", baseline}};
}

} // namespace recorr
