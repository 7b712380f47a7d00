#include "adapterlab/training.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "adapterlab/errors.hpp"

namespace adapterlab {

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw PreconditionError("train config: " + m); };
    if (!(base_lr > 0.0)) fail("base_lr must be > 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(clip_norm > 0.0)) fail("clip_norm must be > 0");
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
}

std::size_t TrainConfig::effective_warmup() const {
    if (epochs == 0) return 0;
    return std::min(warmup_epochs, epochs - 1);
}

const Mat* Grads::find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return &tensors[i];
    return nullptr;
}

Mat* Grads::find(const std::string& name) {
    return const_cast<Mat*>(static_cast<const Grads*>(this)->find(name));
}

double Grads::global_norm() const {
    double s = 0.0;
    for (const Mat& t : tensors) s += frobenius_norm_sq(t);
    return std::sqrt(s);
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
    if (epoch >= cfg.epochs)
        throw PreconditionError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(cfg.epochs) + ")");
    const std::size_t w = cfg.effective_warmup();
    if (epoch < w) return cfg.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(w);
    const double progress = static_cast<double>(epoch - w) / static_cast<double>(cfg.epochs - w);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Grads clip_global(const Grads& grads, double max_norm) {
    if (!(max_norm > 0.0)) throw PreconditionError("clip_global: max_norm must be > 0");
    const double norm = grads.global_norm();
    // The 1e-12 slack keeps clipping idempotent: a clipped vector never re-triggers.
    if (!(norm > max_norm * (1.0 + 1e-12))) return grads;
    const double s = max_norm / norm;
    Grads out = grads;
    for (Mat& t : out.tensors)
        for (double& v : t.data) v *= s;
    return out;
}

void adamw_step(EncoderState& st, OptState& opt, const Grads& grads, double lr, const TrainConfig& cfg) {
    if (lr < 0.0) throw PreconditionError("adamw_step: lr must be >= 0");
    std::map<std::string, std::pair<Mat*, ParamKind>> table;
    for_each_param(st.params, [&](const std::string& name, Mat& m, ParamKind kind) { table[name] = {&m, kind}; });

    opt.step += 1;
    const double t = static_cast<double>(opt.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const std::string& name = grads.names[i];
        if (st.is_frozen(name)) continue;
        auto it = table.find(name);
        if (it == table.end()) throw PreconditionError("adamw_step: unknown tensor '" + name + "'");
        Mat& theta = *it->second.first;
        const Mat& g = grads.tensors[i];
        if (!theta.same_shape(g))
            throw ShapeError("adamw_step: gradient for " + name + " is " + g.shape_str() + ", parameter is " +
                             theta.shape_str());
        Moments& mom = opt.moments[name];
        if (!mom.m.same_shape(theta)) {
            mom.m = Mat(theta.rows, theta.cols);
            mom.v = Mat(theta.rows, theta.cols);
        }
        const double wd = it->second.second == ParamKind::Weight ? cfg.weight_decay : 0.0;
        for (std::size_t k = 0; k < theta.data.size(); ++k) {
            const double gk = g.data[k];
            mom.m.data[k] = cfg.beta1 * mom.m.data[k] + (1.0 - cfg.beta1) * gk;
            mom.v.data[k] = cfg.beta2 * mom.v.data[k] + (1.0 - cfg.beta2) * gk * gk;
            const double mhat = mom.m.data[k] / bc1;
            const double vhat = mom.v.data[k] / bc2;
            const double old = theta.data[k];
            theta.data[k] = old - lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps)) - lr * wd * old;
        }
    }
    ++st.version;
}

namespace {

std::size_t argmax(const Mat& logits) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.data.size(); ++i)
        if (logits.data[i] > logits.data[best]) best = i;
    return best;
}

void check_data(const EncoderState& st, const Dataset& data) {
    data.validate();
    if (data.dim() != st.config.input_dim)
        throw ShapeError("dataset '" + data.name + "' has dim " + std::to_string(data.dim()) + ", model expects " +
                         std::to_string(st.config.input_dim));
    if (data.classes > st.config.classes)
        throw PreconditionError("dataset '" + data.name + "' has " + std::to_string(data.classes) +
                                " classes, model head has " + std::to_string(st.config.classes));
}

}  // namespace

BatchResult batch_gradients(const EncoderState& st, const Dataset& data, std::span<const std::size_t> items) {
    if (items.empty()) throw PreconditionError("batch_gradients: empty batch");
    EncoderParams acc = zeros_like(st.params);
    const double w = 1.0 / static_cast<double>(items.size());
    BatchResult r;
    ForwardCache cache;
    double loss_sum = 0.0;
    for (std::size_t idx : items) {
        const int label = data.labels[idx];
        const Mat logits = classify_cached(st, data.input(idx), cache);
        loss_sum += cross_entropy(logits, label);
        if (argmax(logits) == static_cast<std::size_t>(label)) ++r.correct;
        accumulate_gradients(st, cache, label, acc, w);
    }
    r.mean_loss = loss_sum / static_cast<double>(items.size());
    r.grads = extract_trainable(st, acc);
    return r;
}

Evaluation evaluate(const EncoderState& st, const Dataset& data, Split split) {
    check_data(st, data);
    Evaluation e;
    std::size_t correct = 0;
    double loss = 0.0;
    for (std::size_t i : data.indices(split)) {
        const Mat logits = classify(st, data.input(i));
        loss += cross_entropy(logits, data.labels[i]);
        if (argmax(logits) == static_cast<std::size_t>(data.labels[i])) ++correct;
        ++e.n;
    }
    if (e.n) {
        e.loss = loss / static_cast<double>(e.n);
        e.top1 = 100.0 * static_cast<double>(correct) / static_cast<double>(e.n);
    }
    return e;
}

TrainResult train(EncoderState state, const Dataset& data, const TrainConfig& cfg, const RunLabels& labels) {
    cfg.validate();
    check_data(state, data);
    const std::vector<std::size_t> train_idx = data.indices(Split::Train);
    if (train_idx.empty()) throw PreconditionError("train: dataset '" + data.name + "' has no training items");

    const ModelConfig& mc = state.config;
    MetricsRow proto;
    proto.run_id = labels.run_id;
    proto.dataset = labels.dataset.empty() ? data.name : labels.dataset;
    proto.regime = to_string(mc.regime);
    proto.rank = mc.rank;
    proto.every_k = mc.every_k;
    proto.init = mc.init.to_string();
    proto.alpha = mc.alpha;
    proto.lr = cfg.base_lr;
    proto.wd = cfg.weight_decay;
    proto.seed = cfg.seed;
    proto.trainable_params = total_trainable_count(mc);

    TrainResult result;
    OptState opt;
    const bool has_val = data.count(Split::Val) > 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(cfg, epoch);
        Rng shuffle_rng(mix_seed(cfg.seed, epoch));
        const std::vector<std::size_t> perm = permutation(train_idx.size(), shuffle_rng);
        std::vector<std::size_t> batch;
        batch.reserve(cfg.batch_size);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < perm.size(); start += cfg.batch_size) {
            batch.clear();
            for (std::size_t i = start; i < std::min(perm.size(), start + cfg.batch_size); ++i)
                batch.push_back(train_idx[perm[i]]);
            BatchResult br = batch_gradients(state, data, batch);
            loss_sum += br.mean_loss * static_cast<double>(batch.size());
            correct += br.correct;
            adamw_step(state, opt, clip_global(br.grads, cfg.clip_norm), lr, cfg);
        }
        MetricsRow tr = proto;
        tr.epoch = epoch;
        tr.split = "train";
        tr.loss = loss_sum / static_cast<double>(train_idx.size());
        tr.top1 = 100.0 * static_cast<double>(correct) / static_cast<double>(train_idx.size());
        MetricsRow vr = proto;
        if (has_val) {
            const Evaluation ev = evaluate(state, data, Split::Val);
            vr.epoch = epoch;
            vr.split = "val";
            vr.loss = ev.loss;
            vr.top1 = ev.top1;
        }
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
        tr.wall_ms = ms.count();
        vr.wall_ms = ms.count();
        result.rows.push_back(std::move(tr));
        if (has_val) result.rows.push_back(std::move(vr));
    }
    result.state = std::move(state);
    return result;
}

}  // namespace adapterlab
