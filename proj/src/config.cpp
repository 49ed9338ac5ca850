#include "recorr/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>

namespace recorr {

using nlohmann::json;

void TrainConfig::validate() const {
    require(lr >= 0.0, "train.lr must be >= 0");
    require(weight_decay >= 0.0, "train.weight_decay must be >= 0");
    require(batch_size == 1, "train.batch_size: only 1 is supported");
    require(epochs >= 1, "train.epochs must be >= 1");
    require(clip_norm >= 0.0, "train.clip_norm must be >= 0");
    require(validate_every >= 1, "train.validate_every must be >= 1");
}

void RunConfig::validate() const {
    model.validate();
    loss.validate();
    train.validate();
    data.phantom.validate();
    data.perturb.validate();
    require(data.train >= 0 && data.validation >= 0 && data.test >= 0, "data split sizes must be >= 0");
}

namespace {

struct Key {
    std::string path;
    std::string help;
    std::function<json(const RunConfig&)> get;
    std::function<void(RunConfig&, const json&)> set;
};

template <class T> T as(const json& v) { return v.get<T>(); }

std::array<int, 3> dims_array(const Dims& d) { return {d.d, d.h, d.w}; }

// Hidden widths are not free: h0 is the first half of the fixed features at
// each scale. The key exists so configs can state them; they must agree.
json hidden_default(const ModelConfig& m) {
    return json::array({m.hidden_channels(0), m.hidden_channels(1), m.hidden_channels(2), m.hidden_channels(3)});
}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        {"schema_version", "config schema version (must be 1)",
         [](const RunConfig&) { return json(kConfigSchemaVersion); },
         [](RunConfig&, const json& v) {
             if (as<int>(v) != kConfigSchemaVersion)
                 throw ConfigError("unsupported schema_version " + v.dump());
         }},
        {"seed", "seed for data generation, initialisation and shuffling",
         [](const RunConfig& c) { return json(c.seed); },
         [](RunConfig& c, const json& v) { c.seed = as<std::uint64_t>(v); }},
        {"mode", "learned | direct", [](const RunConfig& c) { return json(to_string(c.model.mode)); },
         [](RunConfig& c, const json& v) {
             const auto s = as<std::string>(v);
             if (s != "learned" && s != "direct") throw ConfigError("expected learned or direct, got '" + s + "'");
             c.model.mode = s == "learned" ? Mode::learned : Mode::direct;
         }},
        {"variant", "standard | diffeo", [](const RunConfig& c) { return json(to_string(c.model.variant)); },
         [](RunConfig& c, const json& v) {
             const auto s = as<std::string>(v);
             if (s != "standard" && s != "diffeo") throw ConfigError("expected standard or diffeo, got '" + s + "'");
             c.model.variant = s == "standard" ? Variant::standard : Variant::diffeo;
         }},
        {"encoder.channels", "feature widths from full resolution down to 1/16",
         [](const RunConfig& c) { return json(c.model.encoder_channels); },
         [](RunConfig& c, const json& v) { c.model.encoder_channels = as<std::array<int, 5>>(v); }},
        {"search.radius", "odd search window extent r (r^3 offsets)",
         [](const RunConfig& c) { return json(c.model.radius); },
         [](RunConfig& c, const json& v) { c.model.radius = as<int>(v); }},
        {"search.temperature", "soft-argmax temperature (direct mode)",
         [](const RunConfig& c) { return json(c.model.temperature); },
         [](RunConfig& c, const json& v) { c.model.temperature = as<double>(v); }},
        {"direct.contrast_floor", "descriptor norm floor (direct mode)",
         [](const RunConfig& c) { return json(c.model.direct_contrast_floor); },
         [](RunConfig& c, const json& v) { c.model.direct_contrast_floor = as<double>(v); }},
        {"direct.smoothing", "confidence-weighted smoothing sigma in voxels (direct mode), 0 disables",
         [](const RunConfig& c) { return json(c.model.direct_smoothing); },
         [](RunConfig& c, const json& v) { c.model.direct_smoothing = as<double>(v); }},
        {"updater.motion_channels", "motion feature width",
         [](const RunConfig& c) { return json(c.model.motion_channels); },
         [](RunConfig& c, const json& v) { c.model.motion_channels = as<int>(v); }},
        {"updater.hidden_channels", "hidden widths per scale 0..3; fixed to half the encoder width",
         [](const RunConfig& c) { return hidden_default(c.model); },
         // checked in parse_run_config once encoder.channels is known
         [](RunConfig&, const json& v) { (void)as<std::array<int, 4>>(v); }},
        {"updater.leaky_slope", "negative slope of every leaky_relu",
         [](const RunConfig& c) { return json(c.model.leaky_slope); },
         [](RunConfig& c, const json& v) { c.model.leaky_slope = as<double>(v); }},
        {"refine.channels", "width of the full-resolution refinement conv",
         [](const RunConfig& c) { return json(c.model.refine_channels); },
         [](RunConfig& c, const json& v) { c.model.refine_channels = as<int>(v); }},
        {"schedule.iterations", "iterations at scales 1/16, 1/8, 1/4, 1/2",
         [](const RunConfig& c) { return json(c.model.schedule.iterations); },
         [](RunConfig& c, const json& v) { c.model.schedule.iterations = as<std::array<int, 4>>(v); }},
        {"schedule.refine", "extra full-resolution refinement step",
         [](const RunConfig& c) { return json(c.model.schedule.refine); },
         [](RunConfig& c, const json& v) { c.model.schedule.refine = as<bool>(v); }},
        {"diffeo.exp_steps", "scaling-and-squaring squarings",
         [](const RunConfig& c) { return json(c.model.exp_steps); },
         [](RunConfig& c, const json& v) { c.model.exp_steps = as<int>(v); }},
        {"loss.similarity", "mse | ncc", [](const RunConfig& c) { return json(to_string(c.loss.similarity)); },
         [](RunConfig& c, const json& v) { c.loss.similarity = similarity_from_string(as<std::string>(v)); }},
        {"loss.ncc_window", "NCC window extent", [](const RunConfig& c) { return json(c.loss.ncc_window); },
         [](RunConfig& c, const json& v) { c.loss.ncc_window = as<int>(v); }},
        {"loss.lambda", "weight of the gradient penalty", [](const RunConfig& c) { return json(c.loss.lambda); },
         [](RunConfig& c, const json& v) { c.loss.lambda = as<double>(v); }},
        {"loss.gamma", "sequence decay in (0, 1]", [](const RunConfig& c) { return json(c.loss.gamma); },
         [](RunConfig& c, const json& v) { c.loss.gamma = as<double>(v); }},
        {"loss.supervision", "full | last_of_scale",
         [](const RunConfig& c) { return json(to_string(c.loss.supervision)); },
         [](RunConfig& c, const json& v) { c.loss.supervision = supervision_from_string(as<std::string>(v)); }},
        {"loss.dice_weight", "weight of the soft Dice term on labels (0 = unsupervised)",
         [](const RunConfig& c) { return json(c.loss.dice_weight); },
         [](RunConfig& c, const json& v) { c.loss.dice_weight = as<double>(v); }},
        {"train.lr", "AdamW learning rate", [](const RunConfig& c) { return json(c.train.lr); },
         [](RunConfig& c, const json& v) { c.train.lr = as<double>(v); }},
        {"train.weight_decay", "AdamW decoupled weight decay",
         [](const RunConfig& c) { return json(c.train.weight_decay); },
         [](RunConfig& c, const json& v) { c.train.weight_decay = as<double>(v); }},
        {"train.batch_size", "pairs per step (1)", [](const RunConfig& c) { return json(c.train.batch_size); },
         [](RunConfig& c, const json& v) { c.train.batch_size = as<int>(v); }},
        {"train.epochs", "passes over the training split", [](const RunConfig& c) { return json(c.train.epochs); },
         [](RunConfig& c, const json& v) { c.train.epochs = as<int>(v); }},
        {"train.clip_norm", "global gradient-norm clip, 0 disables",
         [](const RunConfig& c) { return json(c.train.clip_norm); },
         [](RunConfig& c, const json& v) { c.train.clip_norm = as<double>(v); }},
        {"train.validate_every", "validation cadence in epochs",
         [](const RunConfig& c) { return json(c.train.validate_every); },
         [](RunConfig& c, const json& v) { c.train.validate_every = as<int>(v); }},
        {"data.train", "training pairs", [](const RunConfig& c) { return json(c.data.train); },
         [](RunConfig& c, const json& v) { c.data.train = as<int>(v); }},
        {"data.validation", "validation pairs", [](const RunConfig& c) { return json(c.data.validation); },
         [](RunConfig& c, const json& v) { c.data.validation = as<int>(v); }},
        {"data.test", "test pairs", [](const RunConfig& c) { return json(c.data.test); },
         [](RunConfig& c, const json& v) { c.data.test = as<int>(v); }},
        {"data.dims", "phantom grid (z, y, x)", [](const RunConfig& c) { return json(dims_array(c.data.phantom.dims)); },
         [](RunConfig& c, const json& v) {
             const auto a = as<std::array<int, 3>>(v);
             c.data.phantom.dims = Dims{a[0], a[1], a[2]};
         }},
        {"data.label_count", "labels including background",
         [](const RunConfig& c) { return json(c.data.phantom.label_count); },
         [](RunConfig& c, const json& v) { c.data.phantom.label_count = as<int>(v); }},
        {"data.noise_sigma", "intensity noise", [](const RunConfig& c) { return json(c.data.phantom.noise_sigma); },
         [](RunConfig& c, const json& v) { c.data.phantom.noise_sigma = as<double>(v); }},
        {"data.smoothing", "phantom blur sigma in voxels",
         [](const RunConfig& c) { return json(c.data.phantom.smoothing); },
         [](RunConfig& c, const json& v) { c.data.phantom.smoothing = as<double>(v); }},
        {"data.texture", "in-region texture amplitude",
         [](const RunConfig& c) { return json(c.data.phantom.texture); },
         [](RunConfig& c, const json& v) { c.data.phantom.texture = as<double>(v); }},
        {"data.perturb.kind", "svf | affine_offset | affine_scale | translation | none",
         [](const RunConfig& c) { return json(to_string(c.data.perturb.kind)); },
         [](RunConfig& c, const json& v) { c.data.perturb.kind = perturb_kind_from_string(as<std::string>(v)); }},
        {"data.perturb.svf_factor", "SVF drawn at dims / s, s in {2, 4, 8}",
         [](const RunConfig& c) { return json(c.data.perturb.svf_factor); },
         [](RunConfig& c, const json& v) { c.data.perturb.svf_factor = as<int>(v); }},
        {"data.perturb.magnitude", "svf: max |v| in voxels; affine: offset fraction or x-scale delta",
         [](const RunConfig& c) { return json(c.data.perturb.magnitude); },
         [](RunConfig& c, const json& v) { c.data.perturb.magnitude = as<double>(v); }},
        {"data.perturb.translation", "translation in voxels (z, y, x); zero draws a random direction of |magnitude|",
         [](const RunConfig& c) { return json(c.data.perturb.translation); },
         [](RunConfig& c, const json& v) { c.data.perturb.translation = as<std::array<double, 3>>(v); }},
    };
    return table;
}

// Nested objects become dotted paths; a path is a leaf when it names a key.
void flatten(const json& node, const std::string& prefix, std::map<std::string, json>& out,
             const std::set<std::string>& known) {
    for (auto it = node.begin(); it != node.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it.value().is_object() && !known.count(path)) {
            flatten(it.value(), path, out, known);
        } else {
            if (out.count(path)) throw ConfigError("config key '" + path + "' given twice");
            out[path] = it.value();
        }
    }
}

} // namespace

RunConfig parse_run_config(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    std::set<std::string> known;
    for (const auto& k : keys()) known.insert(k.path);
    std::map<std::string, json> flat;
    flatten(doc, "", flat, known);
    RunConfig cfg;
    for (const auto& [path, value] : flat) {
        if (!known.count(path)) throw ConfigError("unknown config key '" + path + "'");
        for (const auto& k : keys()) {
            if (k.path != path) continue;
            try {
                k.set(cfg, value);
            } catch (const json::exception& e) {
                throw ConfigError("config key '" + path + "': wrong type (" + value.dump() + ")");
            } catch (const ContractError& e) {
                throw ConfigError("config key '" + path + "': " + e.what());
            }
        }
    }
    cfg.data.seed = cfg.seed;
    if (auto it = flat.find("updater.hidden_channels"); it != flat.end() && it->second != hidden_default(cfg.model))
        throw ConfigError("config key 'updater.hidden_channels': " + it->second.dump() +
                          " disagrees with half the encoder widths " + hidden_default(cfg.model).dump());
    try {
        cfg.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const ContractError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_run_config(doc);
}

json to_json(const RunConfig& cfg) {
    json out = json::object();
    for (const auto& k : keys()) {
        // nest by path so the resolved file reads like the input
        json* node = &out;
        std::size_t start = 0, dot;
        while ((dot = k.path.find('.', start)) != std::string::npos) {
            node = &(*node)[k.path.substr(start, dot - start)];
            start = dot + 1;
        }
        (*node)[k.path.substr(start)] = k.get(cfg);
    }
    return out;
}

std::vector<ConfigKeyInfo> config_keys() {
    const RunConfig defaults;
    std::vector<ConfigKeyInfo> out;
    for (const auto& k : keys()) out.push_back({k.path, k.get(defaults).dump(), k.help});
    return out;
}

} // namespace recorr
