#include "adapterlab/backbone.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstring>
#include <memory>

#include "adapterlab/errors.hpp"

namespace adapterlab {

std::string to_string(Regime r) {
    switch (r) {
        case Regime::HeadOnly: return "head_only";
        case Regime::AdapterTune: return "adapter_tune";
        case Regime::FullFineTune: return "full_finetune";
    }
    return "?";
}

Regime parse_regime(const std::string& s) {
    if (s == "head_only") return Regime::HeadOnly;
    if (s == "adapter_tune") return Regime::AdapterTune;
    if (s == "full_finetune") return Regime::FullFineTune;
    throw PreconditionError("unknown regime '" + s + "' (expected head_only, adapter_tune or full_finetune)");
}

std::size_t ModelConfig::mlp_hidden() const {
    return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(d)));
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw PreconditionError("model config: " + m); };
    if (d == 0) fail("d must be >= 1");
    if (layers == 0) fail("layers must be >= 1");
    if (heads == 0 || d % heads != 0) fail("heads must divide d");
    if (n_tokens < 2) fail("n_tokens must be >= 2 (CLS plus at least one patch)");
    if (input_dim == 0 || input_dim % (n_tokens - 1) != 0)
        fail("input_dim " + std::to_string(input_dim) + " not divisible into " + std::to_string(n_tokens - 1) +
             " patches");
    if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) fail("mlp_ratio must be positive");
    if (classes < 2) fail("classes must be >= 2");
    if (rank < 1 || rank > d) fail("rank must satisfy 1 <= rank <= d");
    if (!(alpha > 0.0)) fail("alpha must be > 0");
    if (every_k < 1) fail("every_k must be >= 1");
    if (init.kind == InitScheme::Kind::SmallRandom && !(init.sigma0 > 0.0)) fail("init sigma0 must be > 0");
}

// ---- parameter traversal --------------------------------------------------

namespace {

template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
    fn(std::string("embed.patch"), p.embed.patch, ParamKind::Weight);
    fn(std::string("embed.pos"), p.embed.pos, ParamKind::Embedding);
    fn(std::string("embed.cls"), p.embed.cls, ParamKind::Embedding);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        const std::string pre = "blocks." + std::to_string(i) + ".";
        fn(pre + "ln1.gamma", b.ln1.gamma, ParamKind::Norm);
        fn(pre + "ln1.beta", b.ln1.beta, ParamKind::Norm);
        fn(pre + "attn.q.weight", b.q.weight, ParamKind::Weight);
        fn(pre + "attn.q.bias", b.q.bias, ParamKind::Bias);
        fn(pre + "attn.k.weight", b.k.weight, ParamKind::Weight);
        fn(pre + "attn.k.bias", b.k.bias, ParamKind::Bias);
        fn(pre + "attn.v.weight", b.v.weight, ParamKind::Weight);
        fn(pre + "attn.v.bias", b.v.bias, ParamKind::Bias);
        fn(pre + "attn.o.weight", b.o.weight, ParamKind::Weight);
        fn(pre + "attn.o.bias", b.o.bias, ParamKind::Bias);
        fn(pre + "ln2.gamma", b.ln2.gamma, ParamKind::Norm);
        fn(pre + "ln2.beta", b.ln2.beta, ParamKind::Norm);
        fn(pre + "mlp.fc1.weight", b.fc1.weight, ParamKind::Weight);
        fn(pre + "mlp.fc1.bias", b.fc1.bias, ParamKind::Bias);
        fn(pre + "mlp.fc2.weight", b.fc2.weight, ParamKind::Weight);
        fn(pre + "mlp.fc2.bias", b.fc2.bias, ParamKind::Bias);
    }
    for (std::size_t j = 0; j < p.adapters.size(); ++j) {
        auto& a = p.adapters[j];
        const std::string pre = "adapters." + std::to_string(j) + ".";
        fn(pre + "w_down", a.w_down, ParamKind::Weight);
        fn(pre + "b_down", a.b_down, ParamKind::Bias);
        fn(pre + "w_up", a.w_up, ParamKind::Weight);
        fn(pre + "b_up", a.b_up, ParamKind::Bias);
    }
    fn(std::string("head.weight"), p.head.weight, ParamKind::Weight);
    fn(std::string("head.bias"), p.head.bias, ParamKind::Bias);
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

void for_each_param(EncoderParams& p, const std::function<void(const std::string&, Mat&, ParamKind)>& fn) {
    visit_params(p, fn);
}

void for_each_param(const EncoderParams& p,
                    const std::function<void(const std::string&, const Mat&, ParamKind)>& fn) {
    visit_params(p, fn);
}

EncoderParams zeros_like(const EncoderParams& p) {
    EncoderParams z = p;
    visit_params(z, [](const std::string&, Mat& m, ParamKind) { m.fill(0.0); });
    return z;
}

bool EncoderState::is_frozen(const std::string& name) const {
    auto it = frozen.find(name);
    return it != frozen.end() && it->second;
}

std::size_t EncoderState::parameter_count() const {
    std::size_t n = 0;
    for_each_param(params, [&](const std::string&, const Mat& m, ParamKind) { n += m.size(); });
    return n;
}

std::size_t EncoderState::trainable_parameter_count() const {
    std::size_t n = 0;
    for_each_param(params, [&](const std::string& name, const Mat& m, ParamKind) {
        if (!is_frozen(name)) n += m.size();
    });
    return n;
}

std::vector<std::size_t> adapter_positions(std::size_t layers, std::size_t every_k) {
    if (layers < 1 || every_k < 1) throw PreconditionError("adapter_positions: L and every_k must be >= 1");
    std::vector<std::size_t> pos;
    for (std::size_t l = every_k - 1; l < layers; l += every_k) pos.push_back(l);
    return pos;
}

// ---- counting ---------------------------------------------------------------

std::uint64_t full_model_param_count(const ModelConfig& cfg) {
    const std::uint64_t d = cfg.d;
    const std::uint64_t hid = cfg.mlp_hidden();
    const std::uint64_t embed = cfg.patch_dim() * d + cfg.n_tokens * d + d;
    const std::uint64_t block = 2 * d + 4 * (d * d + d) + 2 * d + (hid * d + hid) + (d * hid + d);
    const std::uint64_t head = cfg.classes * d + cfg.classes;
    std::uint64_t total = embed + cfg.layers * block + head;
    if (cfg.has_adapters())
        total += adapter_positions(cfg.layers, cfg.every_k).size() * adapter_param_count(cfg.rank, cfg.d);
    return total;
}

TrainableCount trainable_count(const ModelConfig& cfg) {
    TrainableCount c;
    c.head = static_cast<std::uint64_t>(cfg.classes) * cfg.d;
    switch (cfg.regime) {
        case Regime::HeadOnly:
            c.formula = c.head;
            c.actual = c.head + cfg.classes;
            break;
        case Regime::AdapterTune:
            c.adapters = adapter_positions(cfg.layers, cfg.every_k).size() * adapter_param_count(cfg.rank, cfg.d);
            c.formula = c.adapters + c.head;
            c.actual = c.formula + cfg.classes;
            break;
        case Regime::FullFineTune:
            c.actual = full_model_param_count(cfg);
            c.formula = c.actual - cfg.classes;
            break;
    }
    return c;
}

std::uint64_t total_trainable_count(const ModelConfig& cfg, bool include_head_bias) {
    const TrainableCount c = trainable_count(cfg);
    return include_head_bias ? c.actual : c.formula;
}

// ---- construction -----------------------------------------------------------

namespace {

Linear make_linear(std::size_t out, std::size_t in, Rng& rng) {
    return {random_normal(out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng), Mat(out, 1)};
}

LayerNormParams make_ln(std::size_t d) { return {Mat(d, 1, 1.0), Mat(d, 1, 0.0)}; }

}  // namespace

EncoderState init_encoder(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderState st;
    st.config = cfg;
    const std::size_t d = cfg.d;
    auto& p = st.params;
    p.embed.patch = random_normal(cfg.patch_dim(), d, 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim())), rng);
    p.embed.pos = random_normal(cfg.n_tokens, d, 0.02, rng);
    p.embed.cls = random_normal(1, d, 0.02, rng);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        BlockParams b;
        b.ln1 = make_ln(d);
        b.q = make_linear(d, d, rng);
        b.k = make_linear(d, d, rng);
        b.v = make_linear(d, d, rng);
        b.o = make_linear(d, d, rng);
        b.ln2 = make_ln(d);
        b.fc1 = make_linear(cfg.mlp_hidden(), d, rng);
        b.fc2 = make_linear(d, cfg.mlp_hidden(), rng);
        p.blocks.push_back(std::move(b));
    }
    p.head = {random_normal(cfg.classes, d, 0.02, rng), Mat(cfg.classes, 1)};
    set_all_trainable(st);
    return st;
}

void prepare_downstream(EncoderState& st, Rng& rng) {
    const ModelConfig& cfg = st.config;
    cfg.validate();
    Rng head_rng = rng.derive("head");
    Rng adapter_rng = rng.derive("adapters");
    st.params.head = {random_normal(cfg.classes, cfg.d, 0.02, head_rng), Mat(cfg.classes, 1)};
    st.params.adapters.clear();
    st.adapter_blocks.clear();
    if (cfg.has_adapters()) {
        st.adapter_blocks = adapter_positions(cfg.layers, cfg.every_k);
        for (std::size_t i = 0; i < st.adapter_blocks.size(); ++i)
            st.params.adapters.push_back(init_adapter(cfg.d, cfg.rank, cfg.alpha, cfg.init, adapter_rng));
    }
    apply_regime(st);
    ++st.version;
}

void apply_regime(EncoderState& st) {
    st.frozen.clear();
    const Regime r = st.config.regime;
    for_each_param(st.params, [&](const std::string& name, const Mat&, ParamKind) {
        bool frozen = false;
        if (r == Regime::HeadOnly) frozen = !starts_with(name, "head.");
        else if (r == Regime::AdapterTune) frozen = !(starts_with(name, "head.") || starts_with(name, "adapters."));
        st.frozen[name] = frozen;
    });
}

void set_all_trainable(EncoderState& st) {
    st.frozen.clear();
    for_each_param(st.params, [&](const std::string& name, const Mat&, ParamKind) { st.frozen[name] = false; });
}

EncoderState without_adapters(const EncoderState& st) {
    EncoderState out = st;
    out.params.adapters.clear();
    out.adapter_blocks.clear();
    for (auto it = out.frozen.begin(); it != out.frozen.end();) {
        if (starts_with(it->first, "adapters.")) it = out.frozen.erase(it);
        else ++it;
    }
    return out;
}

EncoderState make_downstream(const EncoderState& pretrained, const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const ModelConfig& pc = pretrained.config;
    if (pc.d != cfg.d || pc.layers != cfg.layers || pc.heads != cfg.heads || pc.n_tokens != cfg.n_tokens ||
        pc.input_dim != cfg.input_dim || pc.mlp_hidden() != cfg.mlp_hidden())
        throw ShapeError("make_downstream: backbone geometry differs from downstream config");
    EncoderState st = without_adapters(pretrained);
    st.config = cfg;
    prepare_downstream(st, rng);
    return st;
}

// ---- forward ----------------------------------------------------------------

namespace {

Mat linear_forward(const Linear& lin, const Mat& x) {
    Mat y = matmul_nt(x, lin.weight);
    add_row_bias(y, lin.bias);
    return y;
}

Mat head_slice(const Mat& m, std::size_t h, std::size_t dh) {
    Mat s(m.rows, dh);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < dh; ++j) s(i, j) = m(i, h * dh + j);
    return s;
}

Mat block_forward(const BlockParams& b, const ModelConfig& cfg, const Mat& h, BlockCache* cache) {
    LayerNormStats ln1_stats;
    Mat a1 = layernorm(h, b.ln1.gamma, b.ln1.beta, kLayerNormEps, ln1_stats);
    Mat q = linear_forward(b.q, a1);
    Mat k = linear_forward(b.k, a1);
    Mat v = linear_forward(b.v, a1);
    const std::size_t dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat concat(h.rows, cfg.d);
    std::vector<Mat> probs;
    if (cache) probs.reserve(cfg.heads);
    for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
        Mat qh = head_slice(q, hd, dh);
        Mat kh = head_slice(k, hd, dh);
        Mat vh = head_slice(v, hd, dh);
        Mat scores = matmul_nt(qh, kh);
        for (double& s : scores.data) s *= inv_sqrt_dh;
        Mat p = softmax_rows(scores);
        Mat oh = matmul(p, vh);
        for (std::size_t i = 0; i < h.rows; ++i)
            for (std::size_t j = 0; j < dh; ++j) concat(i, hd * dh + j) = oh(i, j);
        if (cache) probs.push_back(std::move(p));
    }
    Mat h1 = linear_forward(b.o, concat);
    for (std::size_t i = 0; i < h1.data.size(); ++i) h1.data[i] += h.data[i];

    LayerNormStats ln2_stats;
    Mat a2 = layernorm(h1, b.ln2.gamma, b.ln2.beta, kLayerNormEps, ln2_stats);
    Mat pre = linear_forward(b.fc1, a2);
    Mat act = gelu(pre);
    Mat h2 = linear_forward(b.fc2, act);
    for (std::size_t i = 0; i < h2.data.size(); ++i) h2.data[i] += h1.data[i];

    if (cache) {
        cache->input = h;
        cache->ln1 = std::move(ln1_stats);
        cache->a1 = std::move(a1);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->attn_concat = std::move(concat);
        cache->h1 = std::move(h1);
        cache->ln2 = std::move(ln2_stats);
        cache->a2 = std::move(a2);
        cache->fc1_pre = std::move(pre);
        cache->fc1_act = std::move(act);
        cache->h2 = h2;
    }
    return h2;
}

Mat forward(const EncoderState& st, std::span<const double> x, ForwardCache* cache) {
    const ModelConfig& cfg = st.config;
    if (x.size() != cfg.input_dim)
        throw ShapeError("encode: input has " + std::to_string(x.size()) + " values, model expects " +
                         std::to_string(cfg.input_dim));
    const auto& p = st.params;
    if (p.blocks.size() != cfg.layers || p.adapters.size() != st.adapter_blocks.size())
        throw ShapeError("encode: encoder state inconsistent with its config");
    const std::size_t n_patches = cfg.n_tokens - 1;
    const std::size_t pd = cfg.patch_dim();
    Mat patches(n_patches, pd);
    std::copy(x.begin(), x.end(), patches.data.begin());

    Mat emb = matmul(patches, p.embed.patch);
    Mat h(cfg.n_tokens, cfg.d);
    for (std::size_t j = 0; j < cfg.d; ++j) h(0, j) = p.embed.cls.data[j] + p.embed.pos(0, j);
    for (std::size_t t = 1; t < cfg.n_tokens; ++t)
        for (std::size_t j = 0; j < cfg.d; ++j) h(t, j) = emb(t - 1, j) + p.embed.pos(t, j);

    if (cache) {
        cache->state_version = st.version;
        cache->params = &st.params;
        cache->patches = std::move(patches);
        cache->blocks.assign(cfg.layers, BlockCache{});
    }
    std::size_t next_adapter = 0;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        BlockCache* bc = cache ? &cache->blocks[l] : nullptr;
        h = block_forward(p.blocks[l], cfg, h, bc);
        if (next_adapter < st.adapter_blocks.size() && st.adapter_blocks[next_adapter] == l) {
            AdapterCache* ac = nullptr;
            if (bc) {
                bc->adapter.emplace();
                ac = &*bc->adapter;
            }
            h = residual_apply(p.adapters[next_adapter], h, ac);
            ++next_adapter;
        }
    }
    Mat cls = Mat::row_vector(h.row(0));
    if (cache) {
        cache->final_tokens = h;
        cache->cls = cls;
    }
    return cls;
}

Mat head_forward(const Linear& head, const Mat& cls) {
    Mat logits = matmul_nt(cls, head.weight);
    add_row_bias(logits, head.bias);
    return logits;
}

}  // namespace

EncodeResult encode(const EncoderState& st, std::span<const double> x) {
    EncodeResult r;
    r.cls_feature = forward(st, x, &r.cache);
    return r;
}

Mat encode_features(const EncoderState& st, std::span<const double> x) { return forward(st, x, nullptr); }

Mat classify(const EncoderState& st, std::span<const double> x) {
    return head_forward(st.params.head, forward(st, x, nullptr));
}

Mat classify_cached(const EncoderState& st, std::span<const double> x, ForwardCache& cache) {
    Mat cls = forward(st, x, &cache);
    cache.logits = head_forward(st.params.head, cls);
    return cache.logits;
}

// ---- digest -----------------------------------------------------------------

std::string frozen_digest(const EncoderState& st) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("frozen_digest: SHA-256 unavailable");
    for_each_param(st.params, [&](const std::string& name, const Mat& m, ParamKind) {
        if (!st.is_frozen(name)) return;
        const std::uint64_t dims[2] = {m.rows, m.cols};
        EVP_DigestUpdate(ctx.get(), name.data(), name.size() + 1);
        EVP_DigestUpdate(ctx.get(), dims, sizeof dims);
        EVP_DigestUpdate(ctx.get(), m.data.data(), m.data.size() * sizeof(double));
    });
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

}  // namespace adapterlab
