#include <doctest.h>

#include <cmath>

#include "adapterlab/adapter.hpp"
#include "adapterlab/errors.hpp"

using namespace adapterlab;

namespace {

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// out[i] = sum_k w_up[i][k] * act(sum_j w_down[k][j] h[j] + b_down[k]) + b_up[i]
std::vector<double> adapter_scalar(const AdapterParams& p, const std::vector<double>& h) {
    const std::size_t d = p.dim(), r = p.rank;
    std::vector<double> z(r), out(d);
    for (std::size_t k = 0; k < r; ++k) {
        double s = p.b_down(k, 0);
        for (std::size_t j = 0; j < d; ++j) s += p.w_down(k, j) * h[j];
        z[k] = p.activation == Activation::Gelu ? gelu_ref(s) : s;
    }
    for (std::size_t i = 0; i < d; ++i) {
        double s = p.b_up(i, 0);
        for (std::size_t k = 0; k < r; ++k) s += p.w_up(i, k) * z[k];
        out[i] = s;
    }
    return out;
}

AdapterParams random_params(std::size_t d, std::size_t r, double alpha, Rng& rng) {
    AdapterParams p;
    p.rank = r;
    p.alpha = alpha;
    p.w_down = random_normal(r, d, 0.5, rng);
    p.b_down = random_normal(r, 1, 0.5, rng);
    p.w_up = random_normal(d, r, 0.5, rng);
    p.b_up = random_normal(d, 1, 0.5, rng);
    return p;
}

double sample_std(const Mat& m) {
    double mean = 0;
    for (double v : m.data) mean += v;
    mean /= static_cast<double>(m.size());
    double var = 0;
    for (double v : m.data) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(m.size()));
}

}  // namespace

TEST_CASE("zero-initialized adapter outputs zero and acts as identity") {
    Rng rng(1);
    const AdapterParams p = init_adapter(16, 4, 1.0, InitScheme::zero(), rng);
    const Mat h = random_normal(5, 16, 3.0, rng);
    const Mat a = adapter_forward(p, h);
    CHECK(max_abs(a) == 0.0);
    CHECK(residual_apply(p, h).bit_equal(h));
    for (double alpha : {0.5, 2.0, 7.25}) {
        AdapterParams q = p;
        q.alpha = alpha;
        CHECK(residual_apply(q, h).bit_equal(h));
    }
}

TEST_CASE("adapter_forward single scalar case") {
    AdapterParams p;
    p.rank = 1;
    p.w_down = Mat::from_rows({{1}});
    p.b_down = Mat::from_rows({{0}});
    p.w_up = Mat::from_rows({{1}});
    p.b_up = Mat::from_rows({{0}});
    const Mat out = adapter_forward(p, Mat::from_rows({{1}}));
    CHECK(std::abs(out(0, 0) - 0.841345) < 1e-6);
}

TEST_CASE("adapter_forward matches a scalar loop") {
    Rng rng(2);
    const AdapterParams p = random_params(4, 2, 1.0, rng);
    const Mat h = random_normal(3, 4, 1.0, rng);
    const Mat out = adapter_forward(p, h);
    for (std::size_t t = 0; t < 3; ++t) {
        const auto ref = adapter_scalar(p, {h.row(t).begin(), h.row(t).end()});
        for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out(t, i) - ref[i]) < 1e-12);
    }
}

TEST_CASE("residual_apply with alpha = 2 matches a scalar loop") {
    Rng rng(3);
    const AdapterParams p = random_params(3, 2, 2.0, rng);
    const Mat h = random_normal(1, 3, 1.0, rng);
    const Mat out = residual_apply(p, h);
    const auto a = adapter_scalar(p, {h.data.begin(), h.data.end()});
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(out(0, i) - (h(0, i) + 2.0 * a[i])) < 1e-12);
}

TEST_CASE("alpha enters linearly") {
    Rng rng(4);
    AdapterParams p = random_params(6, 3, 1.0, rng);
    const Mat h = random_normal(4, 6, 1.0, rng);
    const Mat d1 = sub(residual_apply(p, h), h);
    p.alpha = 0.5;
    const Mat dh = sub(residual_apply(p, h), h);
    CHECK(max_abs(sub(dh, scale(d1, 0.5))) < 1e-15);
    p.alpha = 3.0;
    const Mat d3 = residual_apply(p, h);
    const Mat expect = add(h, scale(adapter_forward(p, h), 3.0));
    CHECK(d3.bit_equal(expect));
}

TEST_CASE("token rows are processed independently") {
    Rng rng(5);
    const AdapterParams p = random_params(5, 2, 1.0, rng);
    const Mat h = random_normal(4, 5, 1.0, rng);
    const std::size_t perm[] = {2, 0, 3, 1};
    Mat hp(4, 5);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t j = 0; j < 5; ++j) hp(t, j) = h(perm[t], j);
    const Mat a = adapter_forward(p, h), ap = adapter_forward(p, hp);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t j = 0; j < 5; ++j) CHECK(ap(t, j) == a(perm[t], j));
}

TEST_CASE("init_adapter distributions") {
    Rng rng(6);
    const AdapterParams z = init_adapter(384, 16, 1.0, InitScheme::zero(), rng);
    CHECK(max_abs(z.w_up) == 0.0);
    CHECK(max_abs(z.b_up) == 0.0);
    CHECK(max_abs(z.b_down) == 0.0);
    CHECK(std::abs(sample_std(z.w_down) - 0.02) < 0.002);

    const AdapterParams s = init_adapter(384, 16, 1.0, InitScheme::small_random(1e-4), rng);
    CHECK(std::abs(sample_std(s.w_up) - 1e-4) < 1e-5);
    CHECK(max_abs(s.b_up) == 0.0);
    CHECK(std::abs(sample_std(s.w_down) - 0.02) < 0.002);
}

TEST_CASE("init_adapter preconditions") {
    Rng rng(7);
    CHECK_THROWS_AS(init_adapter(8, 0, 1.0, InitScheme::zero(), rng), PreconditionError);
    CHECK_THROWS_AS(init_adapter(8, 9, 1.0, InitScheme::zero(), rng), PreconditionError);
    CHECK_THROWS_AS(init_adapter(8, 2, 0.0, InitScheme::zero(), rng), PreconditionError);
    AdapterParams p = init_adapter(8, 2, 1.0, InitScheme::zero(), rng);
    CHECK_THROWS_AS(adapter_forward(p, Mat(2, 7)), ShapeError);
    p.w_up = Mat(8, 3);
    CHECK_THROWS(p.validate());
}

TEST_CASE("init scheme text form") {
    CHECK(InitScheme::parse("zero") == InitScheme::zero());
    CHECK(InitScheme::parse("small_random") == InitScheme::small_random(kSmallRandomDefaultSigma));
    const InitScheme s = InitScheme::parse("small_random:0.01");
    CHECK(s.sigma0 == 0.01);
    CHECK(InitScheme::parse(s.to_string()) == s);
    CHECK_THROWS(InitScheme::parse("gaussian"));
}

TEST_CASE("adapter parameter count") {
    CHECK(adapter_param_count(16, 192) == 6352);
    CHECK(adapter_param_count(16, 192) * 12 == 76224);
    CHECK(adapter_param_count(1, 1) == 4);
    CHECK(adapter_param_count(16, 384) == 12688);
    CHECK(adapter_param_count(16, 384) * 12 == 152256);
    for (std::uint64_t r = 1; r < 20; ++r)
        for (std::uint64_t d = 1; d < 40; ++d) {
            CHECK(adapter_param_count(r + 1, d) > adapter_param_count(r, d));
            CHECK(adapter_param_count(r, d + 1) > adapter_param_count(r, d));
        }
}
