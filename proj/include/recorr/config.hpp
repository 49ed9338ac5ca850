#pragma once

// One JSON document configures every command. Keys are dotted paths
// ("loss.lambda"); nested objects and flat dotted keys are both accepted.
// Unknown keys are rejected with their path, missing keys take defaults, and
// the resolved document lists every key.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "recorr/losses.hpp"
#include "recorr/model.hpp"
#include "recorr/synthdata.hpp"

namespace recorr {

constexpr int kConfigSchemaVersion = 1;

struct TrainConfig {
    double lr = 7e-4;
    double weight_decay = 4e-4;
    int batch_size = 1;
    int epochs = 50;
    double clip_norm = 1.0; // global gradient norm, 0 disables
    int validate_every = 1; // epochs

    void validate() const;
};

struct RunConfig {
    std::uint64_t seed = 0;
    ModelConfig model{};
    LossConfig loss{};
    TrainConfig train{};
    DatasetSpec data{}; // data.seed mirrors seed

    void validate() const;
};

class ConfigError : public ContractError {
  public:
    using ContractError::ContractError;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

struct ConfigKeyInfo {
    std::string path;
    std::string default_value; // JSON text
    std::string help;
};
std::vector<ConfigKeyInfo> config_keys();

} // namespace recorr
