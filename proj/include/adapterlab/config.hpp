#pragma once

// Flat `section.key = value` experiment files. `#` starts a comment, list values are
// comma separated, unknown keys are rejected with their line number.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "adapterlab/backbone.hpp"
#include "adapterlab/bench.hpp"
#include "adapterlab/training.hpp"

namespace adapterlab {

struct TaskConfig {
    std::string source = "planted";  // planted | idx
    std::string name = "planted";
    // planted
    std::size_t input_dim = 8;
    std::size_t feature_dim = 64;
    std::size_t classes = 10;
    std::size_t n_per_class = 200;       // target task
    std::size_t source_per_class = 600;  // source (pretraining) task; 0 means n_per_class
    double noise = kPlantedNoiseDefault;
    double c_decay = 16.0;
    double p_decay = 1.0;
    std::uint64_t seed = 1;
    // idx
    std::string images;
    std::string labels;
    // splits
    double train_fraction = 0.7;
    double val_fraction = 0.3;
    double test_fraction = 0.0;
};

struct TheoryConfig {
    std::size_t d = 64;
    double c_decay = 1.0;
    double p_decay = 1.0;
    double b_norm = 1.0;
    std::size_t draws = 20000;
    std::vector<std::size_t> ranks{1, 2, 4, 8, 16, 32, 64};
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    ModelConfig model;
    TrainConfig train;
    TrainConfig pretrain;
    bool pretrain_enabled = true;
    TaskConfig task;
    SweepSpec sweep;
    TheoryConfig theory;

    ExperimentConfig();
};

// Applies one assignment. `line` is used for error messages only.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value, std::size_t line = 0);
// Parses "key=value" (as given to --override). A bare key such as "epochs" resolves to
// train.<key> when that exists, else model.<key>.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Every accepted key, in documentation order.
const std::vector<std::string>& config_keys();

}  // namespace adapterlab
