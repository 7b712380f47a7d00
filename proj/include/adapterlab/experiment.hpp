#pragma once

// Turns an ExperimentConfig into data plus a frozen backbone ready for downstream runs.

#include <optional>
#include <vector>

#include "adapterlab/bench.hpp"
#include "adapterlab/config.hpp"

namespace adapterlab {

struct PreparedExperiment {
    TransferTask task;                       // target data (split) and adapter-free backbone
    ModelConfig model;                       // cfg.model with input_dim / classes taken from the data
    std::optional<PlantedShiftTask> planted;
    std::vector<MetricsRow> pretrain_rows;
};

// planted: builds the shift (task.c_decay, task.p_decay over task.feature_dim), the
// source/target pair, splits both with task.seed and, when pretrain.enabled, trains the
// backbone on the source task. idx: loads task.images / task.labels and starts from a
// randomly initialized backbone.
PreparedExperiment prepare_experiment(const ExperimentConfig& cfg);

// One downstream run on a prepared experiment with cfg.model / cfg.train.
TrainResult run_single(const PreparedExperiment& prep, const ModelConfig& model, const TrainConfig& train,
                       const std::string& run_id = "run0000");

}  // namespace adapterlab
