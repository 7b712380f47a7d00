// Reverse pass through head, adapters, blocks and embedding.
//
// Frozen tensors act as constants: their gradients are never accumulated, and the
// sweep stops at the lowest block below which nothing is trainable.

#include <cmath>

#include "adapterlab/errors.hpp"
#include "adapterlab/training.hpp"

namespace adapterlab {

namespace {

constexpr std::size_t kBlockTensors = 16;
constexpr std::size_t kAdapterTensors = 4;

// Trainable flags in for_each_param order.
struct TrainableMap {
    std::vector<bool> flags;
    std::size_t layers = 0;

    bool embed(std::size_t i) const { return flags[i]; }  // 0 patch, 1 pos, 2 cls
    bool block(std::size_t l, std::size_t i) const { return flags[3 + l * kBlockTensors + i]; }
    bool adapter(std::size_t j, std::size_t i) const { return flags[3 + layers * kBlockTensors + j * kAdapterTensors + i]; }
    bool head(std::size_t i) const { return flags[flags.size() - 2 + i]; }

    bool any_embed() const { return embed(0) || embed(1) || embed(2); }
    bool any_block(std::size_t l) const {
        for (std::size_t i = 0; i < kBlockTensors; ++i)
            if (block(l, i)) return true;
        return false;
    }
    bool any_adapter(std::size_t j) const {
        for (std::size_t i = 0; i < kAdapterTensors; ++i)
            if (adapter(j, i)) return true;
        return false;
    }
};

TrainableMap trainable_map(const EncoderState& st) {
    TrainableMap tm;
    tm.layers = st.params.blocks.size();
    for_each_param(st.params, [&](const std::string& name, const Mat&, ParamKind) {
        tm.flags.push_back(!st.is_frozen(name));
    });
    return tm;
}

// Block tensor slots, matching for_each_param.
enum BlockSlot : std::size_t {
    kLn1Gamma, kLn1Beta, kQw, kQb, kKw, kKb, kVw, kVb, kOw, kOb,
    kLn2Gamma, kLn2Beta, kFc1w, kFc1b, kFc2w, kFc2b,
};

// dx of y = LN(x) * gamma + beta; accumulates dgamma / dbeta when requested.
Mat layernorm_backward(const Mat& dy, const LayerNormStats& st, const Mat& gamma, Mat* dgamma, Mat* dbeta) {
    const std::size_t n = dy.rows;
    const std::size_t d = dy.cols;
    Mat dx(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        auto dyi = dy.row(i);
        auto xh = st.xhat.row(i);
        if (dgamma)
            for (std::size_t j = 0; j < d; ++j) dgamma->data[j] += dyi[j] * xh[j];
        if (dbeta)
            for (std::size_t j = 0; j < d; ++j) dbeta->data[j] += dyi[j];
        double mean_g = 0.0;
        double mean_gx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double g = dyi[j] * gamma.data[j];
            mean_g += g;
            mean_gx += g * xh[j];
        }
        mean_g /= static_cast<double>(d);
        mean_gx /= static_cast<double>(d);
        auto dxi = dx.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double g = dyi[j] * gamma.data[j];
            dxi[j] = st.rstd[i] * (g - mean_g - xh[j] * mean_gx);
        }
    }
    return dx;
}

Mat slice_cols(const Mat& m, std::size_t start, std::size_t width) {
    Mat s(m.rows, width);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < width; ++j) s(i, j) = m(i, start + j);
    return s;
}

void put_cols(Mat& m, const Mat& s, std::size_t start) {
    for (std::size_t i = 0; i < s.rows; ++i)
        for (std::size_t j = 0; j < s.cols; ++j) m(i, start + j) = s(i, j);
}

// dH is the gradient w.r.t. the adapter output on entry and w.r.t. its input on exit.
void adapter_backward(const AdapterParams& ap, const AdapterCache& ac, Mat& dH, AdapterParams& acc,
                      const TrainableMap& tm, std::size_t j, bool need_input_grad) {
    Mat dA = scale(dH, ap.alpha);
    if (tm.adapter(j, 2)) matmul_tn_acc(acc.w_up, dA, ac.act);
    if (tm.adapter(j, 3)) add_col_sums(acc.b_up, dA);
    if (!(tm.adapter(j, 0) || tm.adapter(j, 1) || need_input_grad)) return;
    Mat dpre = matmul(dA, ap.w_up);
    if (ap.activation == Activation::Gelu)
        for (std::size_t i = 0; i < dpre.data.size(); ++i) dpre.data[i] *= gelu_grad(ac.pre.data[i]);
    if (tm.adapter(j, 0)) matmul_tn_acc(acc.w_down, dpre, ac.input);
    if (tm.adapter(j, 1)) add_col_sums(acc.b_down, dpre);
    if (need_input_grad) matmul_acc(dH, dpre, ap.w_down);
}

// dH: gradient w.r.t. the block output on entry, w.r.t. the block input on exit
// (only when need_input_grad).
void block_backward(const BlockParams& b, const BlockCache& c, const ModelConfig& cfg, Mat& dH, BlockParams& acc,
                    const TrainableMap& tm, std::size_t l, bool need_input_grad) {
    auto tr = [&](std::size_t slot) { return tm.block(l, slot); };

    // MLP residual branch.
    if (tr(kFc2w)) matmul_tn_acc(acc.fc2.weight, dH, c.fc1_act);
    if (tr(kFc2b)) add_col_sums(acc.fc2.bias, dH);
    Mat dpre = matmul(dH, b.fc2.weight);
    for (std::size_t i = 0; i < dpre.data.size(); ++i) dpre.data[i] *= gelu_grad(c.fc1_pre.data[i]);
    if (tr(kFc1w)) matmul_tn_acc(acc.fc1.weight, dpre, c.a2);
    if (tr(kFc1b)) add_col_sums(acc.fc1.bias, dpre);
    Mat da2 = matmul(dpre, b.fc1.weight);
    Mat dh1 = layernorm_backward(da2, c.ln2, b.ln2.gamma, tr(kLn2Gamma) ? &acc.ln2.gamma : nullptr,
                                 tr(kLn2Beta) ? &acc.ln2.beta : nullptr);
    for (std::size_t i = 0; i < dh1.data.size(); ++i) dh1.data[i] += dH.data[i];

    // Attention residual branch.
    if (tr(kOw)) matmul_tn_acc(acc.o.weight, dh1, c.attn_concat);
    if (tr(kOb)) add_col_sums(acc.o.bias, dh1);
    const bool need_qkv = tr(kQw) || tr(kQb) || tr(kKw) || tr(kKb) || tr(kVw) || tr(kVb) || tr(kLn1Gamma) ||
                          tr(kLn1Beta) || need_input_grad;
    if (!need_qkv) return;
    Mat dconcat = matmul(dh1, b.o.weight);
    const std::size_t n = dH.rows;
    const std::size_t dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat dq(n, cfg.d), dk(n, cfg.d), dv(n, cfg.d);
    for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
        const Mat& p = c.probs[hd];
        Mat doh = slice_cols(dconcat, hd * dh, dh);
        Mat qh = slice_cols(c.q, hd * dh, dh);
        Mat kh = slice_cols(c.k, hd * dh, dh);
        Mat vh = slice_cols(c.v, hd * dh, dh);
        Mat dp = matmul_nt(doh, vh);
        Mat dvh = matmul_tn(p, doh);
        Mat ds(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += dp(i, j) * p(i, j);
            for (std::size_t j = 0; j < n; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * inv_sqrt_dh;
        }
        put_cols(dq, matmul(ds, kh), hd * dh);
        put_cols(dk, matmul_tn(ds, qh), hd * dh);
        put_cols(dv, dvh, hd * dh);
    }
    if (tr(kQw)) matmul_tn_acc(acc.q.weight, dq, c.a1);
    if (tr(kQb)) add_col_sums(acc.q.bias, dq);
    if (tr(kKw)) matmul_tn_acc(acc.k.weight, dk, c.a1);
    if (tr(kKb)) add_col_sums(acc.k.bias, dk);
    if (tr(kVw)) matmul_tn_acc(acc.v.weight, dv, c.a1);
    if (tr(kVb)) add_col_sums(acc.v.bias, dv);
    if (!(tr(kLn1Gamma) || tr(kLn1Beta) || need_input_grad)) return;
    Mat da1 = matmul(dq, b.q.weight);
    matmul_acc(da1, dk, b.k.weight);
    matmul_acc(da1, dv, b.v.weight);
    Mat dln = layernorm_backward(da1, c.ln1, b.ln1.gamma, tr(kLn1Gamma) ? &acc.ln1.gamma : nullptr,
                                 tr(kLn1Beta) ? &acc.ln1.beta : nullptr);
    if (need_input_grad) {
        for (std::size_t i = 0; i < dH.data.size(); ++i) dH.data[i] = dh1.data[i] + dln.data[i];
    }
}

}  // namespace

double cross_entropy(const Mat& logits, int label) {
    const std::size_t c = logits.size();
    if (label < 0 || static_cast<std::size_t>(label) >= c)
        throw PreconditionError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(c) + ")");
    double mx = logits.data[0];
    for (double v : logits.data) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits.data) sum += std::exp(v - mx);
    return std::log(sum) + mx - logits.data[static_cast<std::size_t>(label)];
}

void accumulate_gradients(const EncoderState& st, const ForwardCache& cache, int label, EncoderParams& acc,
                          double weight) {
    const ModelConfig& cfg = st.config;
    if (cache.params != &st.params || cache.state_version != st.version || cache.blocks.size() != cfg.layers ||
        cache.logits.size() != cfg.classes)
        throw PreconditionError("backward: cache does not belong to this encoder state (stale or mismatched)");
    if (label < 0 || static_cast<std::size_t>(label) >= cfg.classes)
        throw PreconditionError("backward: label " + std::to_string(label) + " out of range");
    const TrainableMap tm = trainable_map(st);
    const auto& p = st.params;

    // Head.
    Mat dlogits = softmax_rows(cache.logits);
    dlogits.data[static_cast<std::size_t>(label)] -= 1.0;
    for (double& v : dlogits.data) v *= weight;
    if (tm.head(0)) matmul_tn_acc(acc.head.weight, dlogits, cache.cls);
    if (tm.head(1)) add_col_sums(acc.head.bias, dlogits);

    // need_grad_at_or_below[l]: something at block l (block or its adapter) or beneath is trainable.
    std::vector<bool> need(cfg.layers, false);
    {
        bool below = tm.any_embed();
        std::size_t j = 0;
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            below = below || tm.any_block(l);
            while (j < st.adapter_blocks.size() && st.adapter_blocks[j] == l) {
                below = below || tm.any_adapter(j);
                ++j;
            }
            need[l] = below;
        }
    }
    if (!need[cfg.layers - 1]) return;

    Mat dH(cfg.n_tokens, cfg.d);
    {
        Mat dcls = matmul(dlogits, p.head.weight);
        std::copy(dcls.data.begin(), dcls.data.end(), dH.data.begin());
    }

    for (std::size_t l = cfg.layers; l-- > 0;) {
        if (!need[l]) break;
        const BlockCache& bc = cache.blocks[l];
        const bool need_below = l > 0 ? need[l - 1] : tm.any_embed();
        for (std::size_t j = st.adapter_blocks.size(); j-- > 0;) {
            if (st.adapter_blocks[j] != l) continue;
            if (!bc.adapter) throw PreconditionError("backward: cache lacks adapter intermediates");
            const bool need_input = tm.any_block(l) || need_below;
            adapter_backward(p.adapters[j], *bc.adapter, dH, acc.adapters[j], tm, j, need_input);
        }
        if (tm.any_block(l) || need_below) block_backward(p.blocks[l], bc, cfg, dH, acc.blocks[l], tm, l, need_below);
    }

    if (!tm.any_embed()) return;
    if (tm.embed(1)) axpy(acc.embed.pos, 1.0, dH);
    if (tm.embed(2))
        for (std::size_t j = 0; j < cfg.d; ++j) acc.embed.cls.data[j] += dH(0, j);
    if (tm.embed(0)) {
        Mat dtok(cfg.n_tokens - 1, cfg.d);
        std::copy(dH.data.begin() + static_cast<std::ptrdiff_t>(cfg.d), dH.data.end(), dtok.data.begin());
        matmul_tn_acc(acc.embed.patch, cache.patches, dtok);
    }
}

Grads extract_trainable(const EncoderState& st, const EncoderParams& full) {
    Grads g;
    for_each_param(full, [&](const std::string& name, const Mat& m, ParamKind) {
        if (st.is_frozen(name)) return;
        g.names.push_back(name);
        g.tensors.push_back(m);
    });
    return g;
}

Grads backward(const EncoderState& st, const ForwardCache& cache, int label) {
    EncoderParams acc = zeros_like(st.params);
    accumulate_gradients(st, cache, label, acc, 1.0);
    return extract_trainable(st, acc);
}

}  // namespace adapterlab
