#pragma once

// Datasets, deterministic splits, sweeps, aggregation and checkpoints.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adapterlab/backbone.hpp"
#include "adapterlab/dataset.hpp"
#include "adapterlab/metrics.hpp"
#include "adapterlab/theory.hpp"
#include "adapterlab/training.hpp"

namespace adapterlab {

// ---- planted-shift transfer task ----------------------------------------------

inline constexpr double kPlantedNoiseDefault = 0.05;

// Source and target labelings of inputs x ~ N(0, I):
//   phi(x)        = tanh(R x)                      frozen random feature map
//   source logits = W phi(x) + noise
//   target logits = W (I + Delta) phi(x) + noise   Delta = planted low-rank-ish shift
// Each dataset is class-balanced by rejection sampling; source and target use
// independent sample streams.
struct PlantedShiftTask {
    Dataset source;
    Dataset target;
    Mat feature_map;  // feature_dim x d_in
    Mat labeler;      // C x feature_dim
    ShiftMatrix shift;
    double noise = kPlantedNoiseDefault;

    Mat features(std::span<const double> x) const;       // feature_dim x 1
    Mat source_logits(std::span<const double> x) const;  // noise-free, C x 1
    Mat target_logits(std::span<const double> x) const;
    Mat shifted_features(std::span<const double> x) const;  // (I + Delta) phi(x)
};

PlantedShiftTask make_planted_task(std::size_t d_in, std::size_t classes, std::size_t n_per_class,
                                   const ShiftMatrix& shift, double noise, Rng& rng);

// ---- IDX ----------------------------------------------------------------------

// u8 images (magic 00 00 08 03) and u8 labels (00 00 08 01), big-endian dims.
// Pixels are scaled to [0, 1] and flattened row-major. All items are tagged Train.
// When `classes` is given, any label >= classes is an error; otherwise classes = max label + 1.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::optional<std::size_t> classes = std::nullopt, const std::string& name = "idx");

// ---- splits -------------------------------------------------------------------

struct SplitFractions {
    double train = 1.0;
    double val = 0.0;
    double test = 0.0;
};

// Stratified: within each class, a seed-derived permutation assigns the first
// round(n_c * train) items to train, the next round(n_c * val) to val, the rest to test.
Dataset deterministic_split(Dataset data, const SplitFractions& fractions, std::uint64_t seed);

// ---- sweeps -------------------------------------------------------------------

// Empty axes fall back to the base configuration's value.
struct SweepSpec {
    std::vector<Regime> regime;
    std::vector<std::size_t> rank;
    std::vector<std::size_t> every_k;
    std::vector<InitScheme> init;
    std::vector<double> alpha;
    std::vector<double> lr;
    std::vector<double> wd;
    std::vector<std::uint64_t> seeds{0, 1, 2};

    std::size_t cell_count() const;  // product of axis sizes (empty axis counts 1), without seeds
    std::size_t run_count() const { return cell_count() * std::max<std::size_t>(seeds.size(), 1); }
};

struct RunSpec {
    std::size_t index = 0;
    std::string run_id;
    ModelConfig model;
    TrainConfig train;
};

// Cartesian product in canonical order: regime, rank, every_k, init, alpha, lr, wd, then seed.
std::vector<RunSpec> expand_sweep(const SweepSpec& spec, const ModelConfig& base_model, const TrainConfig& base_train);

// A frozen backbone (adapter-free, pretrained) plus the labeled downstream data.
struct TransferTask {
    Dataset target;
    EncoderState backbone;
};

// Worker count from ADAPTERLAB_THREADS (default 1).
std::size_t sweep_threads_from_env();

// Runs every RunSpec (each with its own seeded downstream init) and returns rows in
// canonical order. A failed run contributes one row with `error` set.
std::vector<MetricsRow> run_sweep(const SweepSpec& spec, const TransferTask& task, const ModelConfig& base_model,
                                  const TrainConfig& base_train, std::size_t threads = 1);

// ---- aggregation ----------------------------------------------------------------

struct SummaryRow {
    std::string dataset, regime, init, split;
    std::uint64_t rank = 0, every_k = 0;
    double alpha = 0.0, lr = 0.0, wd = 0.0;
    std::size_t n_seeds = 0;
    double mean_top1 = 0.0, std_top1 = 0.0;
    double mean_loss = 0.0, std_loss = 0.0;
    std::uint64_t trainable_params = 0;
    std::optional<double> delta_head;  // mean_top1 minus the matching head_only mean
};

struct Summary {
    std::vector<SummaryRow> rows;
    std::vector<std::string> warnings;
};

// Final-epoch rows of `split`, grouped by configuration (first-appearance order);
// population std over seeds.
Summary aggregate(const std::vector<MetricsRow>& rows, const std::string& split = "val");

void write_summary_csv(std::ostream& out, const Summary& s);

// ---- checkpoints ----------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "ATCK", u32 version, u64 config length + key=value lines, then per tensor:
// u32 name length, name, u32 ndim, u64 dims, f64 payload. Little-endian throughout.
void save_checkpoint(const EncoderState& state, const std::string& path);
EncoderState load_checkpoint(const std::string& path);
std::string serialize_checkpoint(const EncoderState& state);
EncoderState deserialize_checkpoint(const std::string& bytes);

}  // namespace adapterlab
