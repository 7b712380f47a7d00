#pragma once

// Rank-capacity checks for linearized task shifts.
//
// A shift Delta = U diag(sigma) V^T with sigma_i = C i^{-p} is the target a single
// adapter has to represent. Its best rank-r approximation is the truncated SVD, the
// squared Frobenius error of that truncation is the tail energy sum_{i>r} sigma_i^2,
// and for inputs with ||h|| <= B the squared residual is at most B^2 times that tail.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adapterlab/adapter.hpp"
#include "adapterlab/numkernel.hpp"

namespace adapterlab {

struct Spectrum {
    std::vector<double> sigmas;  // non-increasing, >= 0
    std::optional<double> c_decay;
    std::optional<double> p_decay;

    // sigma_i = c * i^{-p}, i = 1..d
    static Spectrum power_law(std::size_t d, double c, double p);
    void validate() const;
    double tail_energy(std::size_t r) const;  // sum_{i>r} sigma_i^2
    double total_energy() const;
};

struct ShiftMatrix {
    Mat delta;  // d x d
    Mat u;      // d x d
    Mat vt;     // d x d
    Spectrum spectrum;

    std::size_t dim() const { return delta.rows; }
};

struct BoundInputs {
    double b_norm = 1.0;
    std::size_t rank = 1;
    std::size_t n_samples = 1;
    std::size_t l_blocks = 1;
};

// Random orthogonal U, V (orthonormalized Gaussian matrices) and a power-law spectrum.
ShiftMatrix make_shift(std::size_t d, double c_decay, double p_decay, Rng& rng);
// Shift from explicit factors; sigmas must be non-increasing.
ShiftMatrix shift_from_factors(const Mat& u, std::vector<double> sigmas, const Mat& vt);

// U_r diag(sigma_1..r) V_r^T; r = 0 gives the zero matrix.
Mat truncate(const ShiftMatrix& shift, std::size_t r);

// w_up = U_r Sigma_r^{1/2} / alpha, w_down = Sigma_r^{1/2} V_r^T, zero biases, linear
// activation, so alpha * w_up * w_down equals truncate(shift, r).
AdapterParams constructive_adapter(const ShiftMatrix& shift, std::size_t r, double alpha);

// alpha * w_up * w_down (the linear map a linear-activation, zero-bias adapter applies).
Mat adapter_linear_map(const AdapterParams& p);

// B^2 * sum_{i>r} sigma_i^2
double approx_bound(const ShiftMatrix& shift, std::size_t r, const BoundInputs& b);

struct MonteCarloResult {
    double empirical_mse = 0.0;  // mean of ||(Delta - Delta_r) h||^2 over draws
    double bound = 0.0;          // B^2 * tail
    double limit = 0.0;          // bound * (1 + 3 / sqrt(n))
    bool pass = false;           // empirical_mse <= limit
};

// h uniform on the sphere of radius b.
MonteCarloResult verify_bound_monte_carlo(const ShiftMatrix& shift, std::size_t r, double b, std::size_t n_draws,
                                          Rng& rng);
// Same estimator for every rank 0..d at once, sharing the draws. Entry r of the result is rank r.
std::vector<MonteCarloResult> verify_bound_monte_carlo_all_ranks(const ShiftMatrix& shift, double b,
                                                                 std::size_t n_draws, Rng& rng);

// sqrt(sum_{i>r} (c i^{-p})^2) for the infinite power-law series, with an
// Euler-Maclaurin remainder; relative accuracy better than 1e-10.
double tail_decay(std::size_t r, double c_decay, double p_decay);

struct ElbowReport {
    std::vector<std::size_t> ranks;
    std::vector<double> increments;   // metric[i+1] - metric[i]
    double first_increment = 0.0;
    double preceding_total = 0.0;     // metric[n-2] - metric[0]
    double last_increment = 0.0;
    bool pass = false;                // last_increment <= preceding_total
    bool pass_strict = false;         // last_increment <= first_increment
};

// Diminishing-returns check on a (rank, metric) curve with strictly increasing ranks.
ElbowReport elbow_check(const std::vector<std::pair<std::size_t, double>>& curve);

}  // namespace adapterlab
