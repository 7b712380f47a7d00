#pragma once

// Miniature pre-norm ViT encoder with residual adapters wrapped around whole blocks.
//
// Input vectors are cut into n_tokens - 1 equal patches; each patch is embedded by a
// shared linear map, a learned CLS vector is prepended and learned positional rows
// are added. Each block computes
//
//   h1 = h  + MSA(LN1(h))
//   h2 = h1 + MLP(LN2(h1))          MLP = fc2(gelu(fc1(.)))
//   h3 = h2 + alpha * A(h2)         only at adapter positions
//
// and the linear head reads the CLS row of the last block's output.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adapterlab/adapter.hpp"
#include "adapterlab/numkernel.hpp"

namespace adapterlab {

struct Dataset;
struct TrainConfig;
struct MetricsRow;

enum class Regime { HeadOnly, AdapterTune, FullFineTune };

std::string to_string(Regime r);            // head_only | adapter_tune | full_finetune
Regime parse_regime(const std::string& s);

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
    std::size_t input_dim = 64;   // length of a raw input vector
    std::size_t d = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t n_tokens = 5;     // including CLS
    double mlp_ratio = 4.0;
    std::size_t classes = 10;
    std::size_t rank = 16;
    double alpha = 1.0;
    std::size_t every_k = 1;
    InitScheme init = InitScheme::zero();
    Regime regime = Regime::AdapterTune;

    std::size_t patch_dim() const { return input_dim / (n_tokens - 1); }
    std::size_t mlp_hidden() const;
    std::size_t head_dim() const { return d / heads; }
    bool has_adapters() const { return regime == Regime::AdapterTune; }
    void validate() const;
};

struct Linear {
    Mat weight;  // out x in
    Mat bias;    // out x 1
};

struct LayerNormParams {
    Mat gamma;  // d x 1
    Mat beta;   // d x 1
};

struct BlockParams {
    LayerNormParams ln1;
    Linear q, k, v, o;
    LayerNormParams ln2;
    Linear fc1, fc2;
};

struct Embedding {
    Mat patch;  // patch_dim x d
    Mat pos;    // n_tokens x d
    Mat cls;    // 1 x d
};

struct EncoderParams {
    Embedding embed;
    std::vector<BlockParams> blocks;
    std::vector<AdapterParams> adapters;  // one per entry of adapter_positions
    Linear head;                          // C x d, C x 1
};

// How a tensor is treated by the optimizer.
enum class ParamKind { Weight, Bias, Norm, Embedding };

// Visits every tensor in a fixed canonical order with a stable dotted name.
void for_each_param(EncoderParams& p, const std::function<void(const std::string&, Mat&, ParamKind)>& fn);
void for_each_param(const EncoderParams& p,
                    const std::function<void(const std::string&, const Mat&, ParamKind)>& fn);

// Same layout as p with every tensor zeroed.
EncoderParams zeros_like(const EncoderParams& p);

struct EncoderState {
    ModelConfig config;
    EncoderParams params;
    std::vector<std::size_t> adapter_blocks;  // block index of each adapter
    std::map<std::string, bool> frozen;       // tensor name -> excluded from gradients/updates
    std::uint64_t version = 0;                // bumped on every parameter update

    bool is_frozen(const std::string& name) const;
    std::size_t parameter_count() const;
    std::size_t trainable_parameter_count() const;
};

// Block indices {k-1, 2k-1, ...} below L.
std::vector<std::size_t> adapter_positions(std::size_t layers, std::size_t every_k);

struct TrainableCount {
    std::uint64_t adapters = 0;      // number_of_adapters * (2rd + r + d)
    std::uint64_t head = 0;          // C * d
    std::uint64_t formula = 0;       // adapters + head (head bias omitted)
    std::uint64_t actual = 0;        // everything actually updated, head bias included
};

// Trainable parameters for cfg.regime. AdapterTune follows L_adapters * (2rd + r + d) + C d;
// HeadOnly has no adapters; FullFineTune counts every tensor of the model.
TrainableCount trainable_count(const ModelConfig& cfg);
std::uint64_t total_trainable_count(const ModelConfig& cfg, bool include_head_bias = false);
// Every parameter of the adapter-free model plus adapters when the regime has them.
std::uint64_t full_model_param_count(const ModelConfig& cfg);

// Random backbone (no adapters, regime mask not yet applied).
EncoderState init_encoder(const ModelConfig& cfg, Rng& rng);
// Re-initializes the head and, for AdapterTune, inserts freshly initialized adapters
// at adapter_positions; then applies the regime's frozen mask. Head draws come first
// so runs differing only in adapter settings share the head init for a given rng.
void prepare_downstream(EncoderState& state, Rng& rng);
// Sets frozen flags from state.config.regime.
void apply_regime(EncoderState& state);
void set_all_trainable(EncoderState& state);
EncoderState without_adapters(const EncoderState& state);

struct BlockCache {
    Mat input;
    LayerNormStats ln1;
    Mat a1;                          // LN1 output
    Mat q, k, v;                     // tokens x d
    std::vector<Mat> probs;          // per head, tokens x tokens
    Mat attn_concat;                 // tokens x d
    Mat h1;
    LayerNormStats ln2;
    Mat a2;                          // LN2 output
    Mat fc1_pre;                     // tokens x hidden
    Mat fc1_act;
    Mat h2;
    std::optional<AdapterCache> adapter;
};

struct ForwardCache {
    std::uint64_t state_version = 0;
    const EncoderParams* params = nullptr;
    Mat patches;                     // (n_tokens-1) x patch_dim
    std::vector<BlockCache> blocks;
    Mat final_tokens;
    Mat cls;                         // 1 x d
    Mat logits;                      // 1 x C (filled by classify_cached)
};

struct EncodeResult {
    Mat cls_feature;  // 1 x d
    ForwardCache cache;
};

EncodeResult encode(const EncoderState& state, std::span<const double> x);
// CLS feature without building a cache.
Mat encode_features(const EncoderState& state, std::span<const double> x);

Mat classify(const EncoderState& state, std::span<const double> x);
// Forward with cache; the logits are stored in cache.logits and returned.
Mat classify_cached(const EncoderState& state, std::span<const double> x, ForwardCache& cache);

// SHA-256 over names, shapes and payloads of all frozen tensors, hex encoded.
std::string frozen_digest(const EncoderState& state);

// Trains every weight of a fresh adapter-free encoder (geometry from cfg, head sized to
// source.classes) on the train split of `source`. Deterministic given budget.seed.
EncoderState pretrain_backbone(const ModelConfig& cfg, const Dataset& source, const TrainConfig& budget,
                               std::vector<MetricsRow>* log = nullptr);

// Copies the backbone weights of `pretrained` into a state configured by cfg, then
// runs prepare_downstream with rng.
EncoderState make_downstream(const EncoderState& pretrained, const ModelConfig& cfg, Rng& rng);

// Desk-scale stand-in for a pretrained backbone: trains every weight of a fresh
// adapter-free encoder on `source` (with a temporary source head), then swaps in a
// downstream head, inserts adapters per cfg and freezes per cfg.regime.
// Source metrics rows are appended to `log` when given.
EncoderState pretrain_frozen_backbone(const ModelConfig& cfg, const Dataset& source, const TrainConfig& budget,
                                      std::vector<MetricsRow>* log = nullptr);

}  // namespace adapterlab
