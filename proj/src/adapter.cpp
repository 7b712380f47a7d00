#include "adapterlab/adapter.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "adapterlab/errors.hpp"

namespace adapterlab {

InitScheme InitScheme::small_random(double sigma0) {
    if (!(sigma0 > 0.0) || !std::isfinite(sigma0))
        throw PreconditionError("small_random init needs sigma0 > 0, got " + std::to_string(sigma0));
    return {Kind::SmallRandom, sigma0};
}

std::string InitScheme::to_string() const {
    if (kind == Kind::Zero) return "zero";
    char buf[64];
    std::snprintf(buf, sizeof buf, "small_random:%.17g", sigma0);
    return buf;
}

InitScheme InitScheme::parse(const std::string& text) {
    if (text == "zero") return zero();
    if (text == "small_random") return small_random(kSmallRandomDefaultSigma);
    const std::string prefix = "small_random:";
    if (text.rfind(prefix, 0) == 0) {
        const std::string num = text.substr(prefix.size());
        char* end = nullptr;
        const double v = std::strtod(num.c_str(), &end);
        if (num.empty() || end != num.c_str() + num.size())
            throw PreconditionError("bad init scheme '" + text + "'");
        return small_random(v);
    }
    throw PreconditionError("unknown init scheme '" + text + "' (expected zero or small_random[:sigma])");
}

void AdapterParams::validate() const {
    const std::size_t d = w_up.rows;
    if (rank < 1) throw PreconditionError("adapter rank must be >= 1");
    if (rank > d) throw PreconditionError("adapter rank " + std::to_string(rank) + " exceeds d=" + std::to_string(d));
    if (!(alpha > 0.0)) throw PreconditionError("adapter alpha must be > 0");
    if (w_down.rows != rank || w_down.cols != d) throw ShapeError("adapter w_down is " + w_down.shape_str());
    if (w_up.cols != rank) throw ShapeError("adapter w_up is " + w_up.shape_str());
    if (b_down.size() != rank) throw ShapeError("adapter b_down is " + b_down.shape_str());
    if (b_up.size() != d) throw ShapeError("adapter b_up is " + b_up.shape_str());
}

Mat adapter_forward(const AdapterParams& p, const Mat& h, AdapterCache* cache) {
    if (h.cols != p.w_down.cols)
        throw ShapeError("adapter_forward: input " + h.shape_str() + " vs w_down " + p.w_down.shape_str());
    Mat pre = matmul_nt(h, p.w_down);
    add_row_bias(pre, p.b_down);
    Mat act = p.activation == Activation::Gelu ? gelu(pre) : pre;
    Mat out = matmul_nt(act, p.w_up);
    add_row_bias(out, p.b_up);
    if (cache) {
        cache->input = h;
        cache->pre = std::move(pre);
        cache->act = std::move(act);
    }
    return out;
}

Mat adapter_forward(const AdapterParams& p, const Mat& h) { return adapter_forward(p, h, nullptr); }

Mat residual_apply(const AdapterParams& p, const Mat& h, AdapterCache* cache) {
    Mat out = adapter_forward(p, h, cache);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = h.data[i] + p.alpha * out.data[i];
    return out;
}

Mat residual_apply(const AdapterParams& p, const Mat& h) { return residual_apply(p, h, nullptr); }

AdapterParams init_adapter(std::size_t d, std::size_t r, double alpha, const InitScheme& scheme, Rng& rng) {
    if (r < 1 || r > d)
        throw PreconditionError("init_adapter: need 1 <= r <= d, got r=" + std::to_string(r) + " d=" + std::to_string(d));
    if (!(alpha > 0.0)) throw PreconditionError("init_adapter: alpha must be > 0");
    AdapterParams p;
    p.rank = r;
    p.alpha = alpha;
    p.w_down = random_normal(r, d, kDownInitStd, rng);
    p.b_down = Mat(r, 1);
    p.b_up = Mat(d, 1);
    if (scheme.kind == InitScheme::Kind::SmallRandom) {
        if (!(scheme.sigma0 > 0.0)) throw PreconditionError("init_adapter: sigma0 must be > 0");
        p.w_up = random_normal(d, r, scheme.sigma0, rng);
    } else {
        p.w_up = Mat(d, r);
    }
    return p;
}

std::uint64_t adapter_param_count(std::uint64_t r, std::uint64_t d) {
    if (r < 1 || d < 1) throw PreconditionError("adapter_param_count: r and d must be >= 1");
    return 2 * r * d + r + d;
}

}  // namespace adapterlab
