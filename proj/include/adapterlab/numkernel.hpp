#pragma once

// Dense f64 linear algebra, scalar nonlinearities and a portable seeded RNG.
//
// All kernels are serial and use a fixed summation order, so results are
// bitwise reproducible for identical inputs.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace adapterlab {

// Row-major dense matrix. Vectors are represented as n x 1 (column) or 1 x n (row) matrices.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Mat identity(std::size_t n);
    static Mat diag(std::span<const double> values);
    static Mat column(std::span<const double> values);
    static Mat row_vector(std::span<const double> values);

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    std::string shape_str() const;

    void fill(double v);

    // Bitwise equality (distinguishes -0.0 from 0.0 and compares NaN payloads).
    bool bit_equal(const Mat& o) const;
};

// ---- products ------------------------------------------------------------

// a * b. Each output entry accumulates over k in increasing order.
Mat matmul(const Mat& a, const Mat& b);
// a * b^T. Used for y = x W^T with W stored as (out x in).
Mat matmul_nt(const Mat& a, const Mat& b);
// a^T * b.
Mat matmul_tn(const Mat& a, const Mat& b);
// out += a^T * b, summing over the shared row index in increasing order.
void matmul_tn_acc(Mat& out, const Mat& a, const Mat& b);
// out += a * b.
void matmul_acc(Mat& out, const Mat& a, const Mat& b);

Mat transpose(const Mat& a);
Mat add(const Mat& a, const Mat& b);
Mat sub(const Mat& a, const Mat& b);
Mat scale(const Mat& a, double s);
// a += s * b
void axpy(Mat& a, double s, const Mat& b);
// Adds a length-cols bias (any shape with cols entries) to every row of a.
void add_row_bias(Mat& a, const Mat& bias);
// out (1 x cols or cols x 1) += column sums of a.
void add_col_sums(Mat& out, const Mat& a);

double frobenius_norm(const Mat& a);
double frobenius_norm_sq(const Mat& a);
double max_abs(const Mat& a);
bool all_finite(const Mat& a);

// ---- nonlinearities -----------------------------------------------------

// Exact GELU, x * Phi(x), evaluated through erfc so the negative tail keeps its precision.
double gelu(double x);
double gelu_grad(double x);
Mat gelu(const Mat& a);

// Rowwise softmax with max subtraction.
Mat softmax_rows(const Mat& a);

struct LayerNormStats {
    Mat xhat;                   // normalized input, same shape as x
    std::vector<double> rstd;   // 1 / sqrt(var + eps) per row
};

// Per-row normalization with biased variance, followed by gamma/beta (length = cols).
Mat layernorm(const Mat& x, const Mat& gamma, const Mat& beta, double eps);
Mat layernorm(const Mat& x, const Mat& gamma, const Mat& beta, double eps, LayerNormStats& stats);

// ---- decompositions -----------------------------------------------------

struct SvdResult {
    Mat u;                  // m x k
    std::vector<double> s;  // k, non-increasing
    Mat vt;                 // k x n
};

inline constexpr int kSvdMaxSweeps = 100;
inline constexpr double kSvdTolerance = 1e-12;

// Thin SVD by one-sided (Hestenes) Jacobi. A sweep rotates every column pair whose
// normalized inner product exceeds machine precision; iteration stops once the
// normalized off-diagonal Frobenius mass of the column Gram matrix is below
// kSvdTolerance. Throws ConvergenceError after kSvdMaxSweeps sweeps.
SvdResult svd(const Mat& a);

// Orthonormal Q of a square or tall matrix via twice-iterated modified Gram-Schmidt.
// R has a positive diagonal by construction, which fixes column signs.
Mat qr_orthonormal(const Mat& a);

// ---- RNG ----------------------------------------------------------------

// xoshiro256** seeded through splitmix64. Uniform doubles use the top 53 bits.
// Normals use Box-Muller: every call to normal() on an empty cache consumes two
// uniforms (u1, u2), returns r*cos(2 pi u2) and caches r*sin(2 pi u2) for the next call.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();
    double uniform();                        // [0, 1)
    double normal();                         // N(0, 1)
    double normal(double mean, double stddev);
    std::uint64_t below(std::uint64_t n);    // uniform integer in [0, n), unbiased

    // Independent child stream keyed by a tag; does not advance this generator.
    Rng derive(std::uint64_t tag) const;
    Rng derive(std::string_view tag) const;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

Mat random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

// In-place Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace adapterlab
