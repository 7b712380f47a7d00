#include <doctest.h>

#include <cmath>

#include "adapterlab/backbone.hpp"
#include "adapterlab/errors.hpp"
#include "adapterlab/training.hpp"
#include "support.hpp"

using namespace adapterlab;

namespace {

using Vec = std::vector<double>;
using Rows = std::vector<Vec>;

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Vec linear_ref(const Linear& l, const Vec& x) {
    Vec y(l.weight.rows);
    for (std::size_t i = 0; i < y.size(); ++i) {
        double s = l.bias(i, 0);
        for (std::size_t j = 0; j < x.size(); ++j) s += l.weight(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

Vec ln_ref(const Vec& x, const LayerNormParams& p) {
    double mean = 0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = (x[i] - mean) / std::sqrt(var + kLayerNormEps) * p.gamma(i, 0) + p.beta(i, 0);
    return y;
}

// Token-by-token reference forward pass written independently of the library kernels.
Vec logits_ref(const EncoderState& st, const Vec& x) {
    const ModelConfig& c = st.config;
    const auto& P = st.params;
    const std::size_t T = c.n_tokens, d = c.d, pd = c.patch_dim(), dh = d / c.heads;
    Rows h(T, Vec(d));
    for (std::size_t j = 0; j < d; ++j) h[0][j] = P.embed.cls(0, j) + P.embed.pos(0, j);
    for (std::size_t t = 1; t < T; ++t)
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0;
            for (std::size_t u = 0; u < pd; ++u) s += x[(t - 1) * pd + u] * P.embed.patch(u, j);
            h[t][j] = s + P.embed.pos(t, j);
        }
    std::size_t next = 0;
    for (std::size_t l = 0; l < c.layers; ++l) {
        const BlockParams& b = P.blocks[l];
        Rows q(T), k(T), v(T);
        for (std::size_t t = 0; t < T; ++t) {
            const Vec a = ln_ref(h[t], b.ln1);
            q[t] = linear_ref(b.q, a);
            k[t] = linear_ref(b.k, a);
            v[t] = linear_ref(b.v, a);
        }
        Rows concat(T, Vec(d, 0.0));
        for (std::size_t hd = 0; hd < c.heads; ++hd)
            for (std::size_t t = 0; t < T; ++t) {
                Vec sc(T);
                double mx = -INFINITY;
                for (std::size_t u = 0; u < T; ++u) {
                    double s = 0;
                    for (std::size_t j = 0; j < dh; ++j) s += q[t][hd * dh + j] * k[u][hd * dh + j];
                    sc[u] = s / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, sc[u]);
                }
                double z = 0;
                for (double& s : sc) z += (s = std::exp(s - mx));
                for (std::size_t u = 0; u < T; ++u)
                    for (std::size_t j = 0; j < dh; ++j) concat[t][hd * dh + j] += sc[u] / z * v[u][hd * dh + j];
            }
        for (std::size_t t = 0; t < T; ++t) {
            const Vec o = linear_ref(b.o, concat[t]);
            for (std::size_t j = 0; j < d; ++j) h[t][j] += o[j];
            Vec m = linear_ref(b.fc1, ln_ref(h[t], b.ln2));
            for (double& e : m) e = gelu_ref(e);
            const Vec f = linear_ref(b.fc2, m);
            for (std::size_t j = 0; j < d; ++j) h[t][j] += f[j];
        }
        if (next < st.adapter_blocks.size() && st.adapter_blocks[next] == l) {
            const AdapterParams& a = P.adapters[next++];
            for (std::size_t t = 0; t < T; ++t) {
                Vec z(a.rank);
                for (std::size_t r = 0; r < a.rank; ++r) {
                    double s = a.b_down(r, 0);
                    for (std::size_t j = 0; j < d; ++j) s += a.w_down(r, j) * h[t][j];
                    z[r] = gelu_ref(s);
                }
                for (std::size_t j = 0; j < d; ++j) {
                    double s = a.b_up(j, 0);
                    for (std::size_t r = 0; r < a.rank; ++r) s += a.w_up(j, r) * z[r];
                    h[t][j] += a.alpha * s;
                }
            }
        }
    }
    return linear_ref(P.head, h[0]);
}

}  // namespace

TEST_CASE("adapter positions") {
    CHECK(adapter_positions(12, 1).size() == 12);
    CHECK(adapter_positions(12, 2) == std::vector<std::size_t>{1, 3, 5, 7, 9, 11});
    CHECK(adapter_positions(5, 3) == std::vector<std::size_t>{2});
    for (std::size_t L = 1; L <= 16; ++L)
        for (std::size_t k = 1; k <= 4; ++k) {
            const auto pos = adapter_positions(L, k);
            CHECK(pos.size() == L / k);
            for (std::size_t i = 0; i < pos.size(); ++i) CHECK(pos[i] == (i + 1) * k - 1);
        }
}

TEST_CASE("adapter count in built states follows floor(L / k)") {
    for (std::size_t L = 1; L <= 6; ++L)
        for (std::size_t k = 1; k <= 4; ++k) {
            ModelConfig c = test::tiny_config();
            c.layers = L;
            c.every_k = k;
            Rng rng(L * 10 + k);
            EncoderState st = init_encoder(c, rng);
            prepare_downstream(st, rng);
            CHECK(st.params.adapters.size() == L / k);
        }
}

TEST_CASE("trainable parameter counts") {
    ModelConfig c;
    c.d = 192;
    c.layers = 12;
    c.heads = 3;
    c.rank = 16;
    c.classes = 10;
    c.regime = Regime::AdapterTune;
    c.input_dim = 64;
    TrainableCount t = trainable_count(c);
    CHECK(t.adapters == 76224);
    CHECK(t.formula == 78144);
    CHECK(t.actual == 78154);
    CHECK(total_trainable_count(c) == 78144);
    c.every_k = 2;
    CHECK(trainable_count(c).adapters == 6 * 6352);

    c.every_k = 1;
    c.regime = Regime::HeadOnly;
    CHECK(trainable_count(c).formula == 1920);
    CHECK(trainable_count(c).adapters == 0);

    // Grid of the closed form against the tensors actually marked trainable.
    for (std::size_t d : {8u, 16u})
        for (std::size_t r : {1u, 2u, 8u})
            for (std::size_t L : {1u, 3u})
                for (std::size_t C : {2u, 5u})
                    for (std::size_t k : {1u, 2u}) {
                        ModelConfig m = test::tiny_config();
                        m.d = d;
                        m.rank = r;
                        m.layers = L;
                        m.classes = C;
                        m.every_k = k;
                        const std::uint64_t expect = (L / k) * (2 * r * d + r + d) + C * d;
                        CHECK(total_trainable_count(m) == expect);
                        Rng rng(1);
                        for (Regime reg : {Regime::HeadOnly, Regime::AdapterTune, Regime::FullFineTune}) {
                            m.regime = reg;
                            EncoderState st = init_encoder(m, rng);
                            prepare_downstream(st, rng);
                            CHECK(st.trainable_parameter_count() == trainable_count(m).actual);
                            if (reg == Regime::FullFineTune) CHECK(st.parameter_count() == full_model_param_count(m));
                        }
                    }
}

TEST_CASE("config validation") {
    ModelConfig c = test::tiny_config();
    c.rank = 0;
    CHECK_THROWS_AS(c.validate(), PreconditionError);
    c = test::tiny_config();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), PreconditionError);
    c = test::tiny_config();
    c.classes = 1;
    CHECK_THROWS_AS(c.validate(), PreconditionError);
    c = test::tiny_config();
    c.input_dim = 7;
    CHECK_THROWS_AS(c.validate(), PreconditionError);
    CHECK(parse_regime(to_string(Regime::FullFineTune)) == Regime::FullFineTune);
    CHECK_THROWS(parse_regime("lora"));
}

TEST_CASE("forward matches a scalar reference") {
    for (std::size_t heads : {1u, 2u}) {
        ModelConfig c = test::tiny_config();
        c.heads = heads;
        c.init = InitScheme::small_random(0.3);
        Rng rng(100 + heads);
        EncoderState st = init_encoder(c, rng);
        prepare_downstream(st, rng);
        test::randomize_all(st, rng, 0.4);
        for (int t = 0; t < 5; ++t) {
            const Mat x = random_normal(1, c.input_dim, 1.0, rng);
            const Mat logits = classify(st, x.row(0));
            const Vec ref = logits_ref(st, x.data);
            for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(logits(0, i) - ref[i]) < 1e-12);
        }
    }
}

TEST_CASE("hand-set L=1, heads=1, d=2, n_tokens=2 model") {
    ModelConfig c;
    c.input_dim = 2;
    c.d = 2;
    c.layers = 1;
    c.heads = 1;
    c.n_tokens = 2;
    c.mlp_ratio = 1.0;
    c.classes = 2;
    c.rank = 1;
    c.regime = Regime::FullFineTune;
    Rng rng(0);
    EncoderState st = init_encoder(c, rng);
    auto& p = st.params;
    p.embed.patch = Mat::from_rows({{1.0, 0.5}, {-0.5, 2.0}});
    p.embed.pos = Mat::from_rows({{0.1, -0.2}, {0.3, 0.0}});
    p.embed.cls = Mat::from_rows({{0.7, -0.4}});
    BlockParams& b = p.blocks[0];
    b.q = {Mat::from_rows({{1, 0}, {0, 1}}), Mat::from_rows({{0}, {0}})};
    b.k = {Mat::from_rows({{0.5, 0.5}, {-1, 1}}), Mat::from_rows({{0.1}, {0}})};
    b.v = {Mat::from_rows({{2, 0}, {1, 1}}), Mat::from_rows({{0}, {-0.3}})};
    b.o = {Mat::from_rows({{1, -1}, {0.5, 0.5}}), Mat::from_rows({{0.2}, {0.1}})};
    b.fc1 = {Mat::from_rows({{1, 2}, {-1, 0.5}}), Mat::from_rows({{0}, {0.5}})};
    b.fc2 = {Mat::from_rows({{0.3, -0.7}, {1.1, 0.2}}), Mat::from_rows({{-0.1}, {0.0}})};
    p.head = {Mat::from_rows({{1, 0}, {0, 1}}), Mat(2, 1)};
    const double xin[] = {0.9, -1.3};

    // Hand expansion. Two tokens with d = 2: LN maps each row to (+-1, -+1) scaled by sqrt(var/(var+eps)).
    auto ln2 = [](double a, double b) {
        const double m = 0.5 * (a + b), var = 0.25 * (a - b) * (a - b);
        const double s = 1.0 / std::sqrt(var + kLayerNormEps);
        return std::pair{(a - m) * s, (b - m) * s};
    };
    const double c0 = 0.7 + 0.1, c1 = -0.4 - 0.2;
    const double t0 = 0.9 * 1.0 + -1.3 * -0.5 + 0.3, t1 = 0.9 * 0.5 + -1.3 * 2.0 + 0.0;
    auto [a00, a01] = ln2(c0, c1);
    auto [a10, a11] = ln2(t0, t1);
    const double q0 = a00, q1 = a01;
    const double k00 = 0.5 * a00 + 0.5 * a01 + 0.1, k01 = -a00 + a01;
    const double k10 = 0.5 * a10 + 0.5 * a11 + 0.1, k11 = -a10 + a11;
    const double v00 = 2 * a00, v01 = a00 + a01 - 0.3;
    const double v10 = 2 * a10, v11 = a10 + a11 - 0.3;
    const double s0 = (q0 * k00 + q1 * k01) / std::sqrt(2.0), s1 = (q0 * k10 + q1 * k11) / std::sqrt(2.0);
    const double mx = std::max(s0, s1);
    const double e0 = std::exp(s0 - mx), e1 = std::exp(s1 - mx);
    const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    const double o0 = p0 * v00 + p1 * v10, o1 = p0 * v01 + p1 * v11;
    const double h0 = c0 + (o0 - o1 + 0.2), h1 = c1 + (0.5 * o0 + 0.5 * o1 + 0.1);
    auto [b0, b1] = ln2(h0, h1);
    const double m0 = gelu_ref(b0 + 2 * b1), m1 = gelu_ref(-b0 + 0.5 * b1 + 0.5);
    const double y0 = h0 + 0.3 * m0 - 0.7 * m1 - 0.1, y1 = h1 + 1.1 * m0 + 0.2 * m1;

    const Mat out = encode_features(st, xin);
    CHECK(std::abs(out(0, 0) - y0) < 1e-12);
    CHECK(std::abs(out(0, 1) - y1) < 1e-12);
}

TEST_CASE("permuting patch tokens with their positional rows keeps the CLS output") {
    ModelConfig c = test::tiny_config();
    Rng rng(9);
    EncoderState st = init_encoder(c, rng);
    prepare_downstream(st, rng);
    test::randomize_all(st, rng, 0.3);
    const Mat x = random_normal(1, c.input_dim, 1.0, rng);
    const Mat before = encode_features(st, x.row(0));

    const std::size_t perm[] = {2, 0, 3, 1};  // new patch slot t takes old patch perm[t]
    const std::size_t pd = c.patch_dim();
    Mat xp(1, c.input_dim);
    EncoderState sp = st;
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t u = 0; u < pd; ++u) xp(0, t * pd + u) = x(0, perm[t] * pd + u);
        for (std::size_t j = 0; j < c.d; ++j) sp.params.embed.pos(t + 1, j) = st.params.embed.pos(perm[t] + 1, j);
    }
    const Mat after = encode_features(sp, xp.row(0));
    for (std::size_t j = 0; j < c.d; ++j) CHECK(std::abs(after(0, j) - before(0, j)) < 1e-12);
}

TEST_CASE("classify edge cases") {
    ModelConfig c = test::tiny_config();
    Rng rng(10);
    EncoderState st = init_encoder(c, rng);
    prepare_downstream(st, rng);
    const Mat x = random_normal(1, c.input_dim, 1.0, rng);
    st.params.head.weight.fill(0.0);
    st.params.head.bias.fill(0.0);
    CHECK(max_abs(classify(st, x.row(0))) == 0.0);

    c.classes = 2;
    EncoderState s2 = init_encoder(c, rng);
    prepare_downstream(s2, rng);
    for (std::size_t j = 0; j < c.d; ++j) s2.params.head.weight(1, j) = s2.params.head.weight(0, j);
    const Mat l = classify(s2, x.row(0));
    CHECK(l(0, 0) == l(0, 1));
    CHECK_THROWS_AS(classify(s2, std::vector<double>(3)), ShapeError);
}

TEST_CASE("zero-initialized adapters leave the network unchanged") {
    for (std::size_t d : {8u, 64u})
        for (std::size_t L : {2u, 12u})
            for (std::size_t r : {2u, 16u})
                for (std::size_t k : {1u, 2u}) {
                    if (r > d) continue;
                    ModelConfig c = test::tiny_config();
                    c.d = d;
                    c.heads = 2;
                    c.layers = L;
                    c.rank = r;
                    c.every_k = k;
                    Rng rng(d * 1000 + L * 100 + r * 10 + k);
                    EncoderState base = init_encoder(c, rng);
                    EncoderState adapted = make_downstream(base, c, rng);
                    const EncoderState plain = without_adapters(adapted);
                    REQUIRE(adapted.params.adapters.size() == L / k);
                    for (int t = 0; t < 4; ++t) {
                        const Mat x = random_normal(1, c.input_dim, 1.0, rng);
                        CHECK(classify(adapted, x.row(0)).bit_equal(classify(plain, x.row(0))));
                        CHECK(encode(adapted, x.row(0)).cls_feature.bit_equal(encode_features(plain, x.row(0))));
                    }
                }
}

TEST_CASE("regime masks") {
    ModelConfig c = test::tiny_config();
    Rng rng(12);
    for (Regime r : {Regime::HeadOnly, Regime::AdapterTune, Regime::FullFineTune}) {
        c.regime = r;
        EncoderState st = init_encoder(c, rng);
        prepare_downstream(st, rng);
        for (const auto& [name, frozen] : st.frozen) {
            const bool head = name.rfind("head.", 0) == 0, adapter = name.rfind("adapters.", 0) == 0;
            if (r == Regime::HeadOnly) CHECK(frozen == !head);
            if (r == Regime::AdapterTune) CHECK(frozen == !(head || adapter));
            if (r == Regime::FullFineTune) CHECK_FALSE(frozen);
        }
        CHECK(st.params.adapters.empty() == (r != Regime::AdapterTune));
    }
}

TEST_CASE("frozen digest tracks frozen tensors only") {
    ModelConfig c = test::tiny_config();
    Rng rng(13);
    EncoderState st = init_encoder(c, rng);
    prepare_downstream(st, rng);
    const std::string d0 = frozen_digest(st);
    CHECK(d0.size() == 64);
    st.params.head.weight(0, 0) += 1.0;
    CHECK(frozen_digest(st) == d0);
    st.params.blocks[0].q.weight(0, 0) += 1.0;
    CHECK(frozen_digest(st) != d0);
}

TEST_CASE("make_downstream rejects mismatched geometry") {
    ModelConfig c = test::tiny_config();
    Rng rng(14);
    const EncoderState base = init_encoder(c, rng);
    ModelConfig other = c;
    other.layers = 3;
    CHECK_THROWS_AS(make_downstream(base, other, rng), ShapeError);
}
