#pragma once

// Residual low-rank bottleneck adapter:
//
//   A(h)  = W_up * act(W_down * h + b_down) + b_up        (act = GELU)
//   h'    = h + alpha * A(h)
//
// Tokens are rows of h, so the batched form is A(H) = act(H W_down^T + b_down^T) W_up^T + b_up^T.

#include <cstddef>
#include <cstdint>
#include <string>

#include "adapterlab/numkernel.hpp"

namespace adapterlab {

enum class Activation { Gelu, Linear };

// Initialization of the up-projection. w_down is always N(0, kDownInitStd^2).
struct InitScheme {
    enum class Kind { Zero, SmallRandom };
    Kind kind = Kind::Zero;
    double sigma0 = 0.0;  // std of w_up under SmallRandom

    static InitScheme zero() { return {}; }
    static InitScheme small_random(double sigma0);

    // "zero" or "small_random:<sigma0>"
    std::string to_string() const;
    static InitScheme parse(const std::string& text);

    bool operator==(const InitScheme&) const = default;
};

inline constexpr double kDownInitStd = 0.02;
inline constexpr double kSmallRandomDefaultSigma = 1e-4;

struct AdapterParams {
    Mat w_down;  // r x d
    Mat b_down;  // r x 1
    Mat w_up;    // d x r
    Mat b_up;    // d x 1
    std::size_t rank = 0;
    double alpha = 1.0;
    Activation activation = Activation::Gelu;

    std::size_t dim() const { return w_up.rows; }
    // Throws ShapeError / PreconditionError if fields are inconsistent.
    void validate() const;
};

// Intermediates kept by the forward pass for backprop.
struct AdapterCache {
    Mat input;   // h, tokens x d
    Mat pre;     // h W_down^T + b_down^T, tokens x r
    Mat act;     // act(pre)
};

Mat adapter_forward(const AdapterParams& p, const Mat& h);
Mat adapter_forward(const AdapterParams& p, const Mat& h, AdapterCache* cache);

// h + alpha * A(h). No shortcut when A(h) is zero: the identity at init falls out
// of the arithmetic.
Mat residual_apply(const AdapterParams& p, const Mat& h);
Mat residual_apply(const AdapterParams& p, const Mat& h, AdapterCache* cache);

// Draws w_down first, then (SmallRandom only) w_up. Biases start at zero.
AdapterParams init_adapter(std::size_t d, std::size_t r, double alpha, const InitScheme& scheme, Rng& rng);

// 2rd + r + d
std::uint64_t adapter_param_count(std::uint64_t r, std::uint64_t d);

}  // namespace adapterlab
