#pragma once

// Cross-entropy objective, reverse-mode gradients over the trainable partition,
// AdamW with decoupled weight decay, warmup + cosine schedule and global-norm clipping.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adapterlab/backbone.hpp"
#include "adapterlab/dataset.hpp"
#include "adapterlab/metrics.hpp"

namespace adapterlab {

struct TrainConfig {
    double base_lr = 1e-3;
    double weight_decay = 0.05;
    std::size_t epochs = 20;
    std::size_t warmup_epochs = 5;
    double clip_norm = 1.0;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
    // Warmup length actually used: min(warmup_epochs, epochs - 1).
    std::size_t effective_warmup() const;
};

// Gradients of the trainable tensors only, in canonical parameter order.
struct Grads {
    std::vector<std::string> names;
    std::vector<Mat> tensors;

    std::size_t size() const { return names.size(); }
    const Mat* find(const std::string& name) const;
    Mat* find(const std::string& name);
    double global_norm() const;
};

struct Moments {
    Mat m;
    Mat v;
};

struct OptState {
    std::map<std::string, Moments> moments;
    std::uint64_t step = 0;
};

// -log softmax(logits)[label] via a max-shifted log-sum-exp.
double cross_entropy(const Mat& logits, int label);

// Exact gradient of cross_entropy(classify(x), label) w.r.t. every trainable tensor.
// The cache must come from classify_cached on the same, unmodified state.
Grads backward(const EncoderState& state, const ForwardCache& cache, int label);

// acc[name] += weight * dLoss/dname for trainable tensors; frozen entries of acc are untouched.
void accumulate_gradients(const EncoderState& state, const ForwardCache& cache, int label, EncoderParams& acc,
                          double weight);
Grads extract_trainable(const EncoderState& state, const EncoderParams& full);

struct BatchResult {
    Grads grads;        // of the mean loss
    double mean_loss = 0.0;
    std::size_t correct = 0;
};

BatchResult batch_gradients(const EncoderState& state, const Dataset& data, std::span<const std::size_t> items);

// Linear warmup over effective_warmup() epochs, then half-cosine to zero.
double lr_at(const TrainConfig& cfg, std::size_t epoch);

// Rescales by max_norm / ||g|| when the global L2 norm exceeds max_norm.
Grads clip_global(const Grads& grads, double max_norm);

// One AdamW update of the trainable tensors named in grads. Weight decay applies to
// ParamKind::Weight tensors only.
void adamw_step(EncoderState& state, OptState& opt, const Grads& grads, double lr, const TrainConfig& cfg);

struct Evaluation {
    double loss = 0.0;
    double top1 = 0.0;  // percent
    std::size_t n = 0;
};

Evaluation evaluate(const EncoderState& state, const Dataset& data, Split split);

struct RunLabels {
    std::string run_id = "run";
    std::string dataset;  // defaults to data.name
};

struct TrainResult {
    EncoderState state;
    std::vector<MetricsRow> rows;
};

// Runs cfg.epochs epochs over the train split. Emits a train row (running mean over
// the epoch's batches) and a val row (post-epoch evaluation, when the split is
// non-empty) per epoch. Shuffles with a Fisher-Yates permutation keyed by (seed, epoch).
TrainResult train(EncoderState state, const Dataset& data, const TrainConfig& cfg, const RunLabels& labels = {});

}  // namespace adapterlab
