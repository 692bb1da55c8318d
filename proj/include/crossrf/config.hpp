#pragma once

#include "crossrf/adda_training.hpp"
#include "crossrf/models.hpp"
#include "crossrf/rf_simulator.hpp"
#include "crossrf/signal_data.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace crossrf {

/// Invalid or incomplete configuration. The message names the offending field.
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct DataConfig {
    Index window_len = 1024;
    Index hop = 512;
    Normalization normalization = Normalization::UnitRMS;
    std::array<double, 3> split_ratios{0.7, 0.15, 0.15};
};

struct Scenario {
    std::string name;
    std::vector<int> source_channels;
    std::vector<int> target_channels;
};

struct Paths {
    std::filesystem::path data_dir;
    std::filesystem::path output_dir;
};

/// One experiment. `seed` is the root of every random stream.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    Scenario scenario;
    Paths paths;
    SimConfig sim;
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    SearchSpace search;

    /// Copies the root seed into the sub-configs that carry one.
    void apply_seed(std::uint64_t root);
    [[nodiscard]] DatasetOptions dataset_options(Domain domain) const;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const SimConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const SearchSpace& s);
nlohmann::json to_json(const ExperimentConfig& c);

/// Parsers reject unknown keys and wrong types with ConfigError; absent keys keep their defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);
SimConfig sim_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Required top-level fields: seed, scenario.source_channels, scenario.target_channels.
/// Relative paths resolve against `base_dir`. Throws ConfigError on any invalid field.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Throws IOError if unreadable, ConfigError if malformed or invalid.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Cross-field checks (channel sets disjoint and non-empty, window vs encoder, split ratios).
void validate(const ExperimentConfig& c);

/// Every scenario channel must appear in sim.channels or, when given, in the manifest.
void check_channels_known(const ExperimentConfig& c, const Manifest* manifest = nullptr);

}  // namespace crossrf
