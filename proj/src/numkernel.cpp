#include "adapterlab/numkernel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "adapterlab/errors.hpp"

namespace adapterlab {

namespace {

[[noreturn]] void shape_fail(const char* op, const Mat& a, const Mat& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

// ---- Mat -------------------------------------------------------------------

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Mat m;
    m.rows = rows.size();
    m.cols = m.rows ? rows.begin()->size() : 0;
    m.data.reserve(m.rows * m.cols);
    for (const auto& r : rows) {
        if (r.size() != m.cols) throw ShapeError("Mat::from_rows: ragged rows");
        m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
}

Mat Mat::identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Mat Mat::diag(std::span<const double> values) {
    Mat m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    return m;
}

Mat Mat::column(std::span<const double> values) {
    Mat m(values.size(), 1);
    std::copy(values.begin(), values.end(), m.data.begin());
    return m;
}

Mat Mat::row_vector(std::span<const double> values) {
    Mat m(1, values.size());
    std::copy(values.begin(), values.end(), m.data.begin());
    return m;
}

std::string Mat::shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

void Mat::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool Mat::bit_equal(const Mat& o) const {
    return same_shape(o) &&
           (data.empty() || std::memcmp(data.data(), o.data.data(), data.size() * sizeof(double)) == 0);
}

// ---- products ------------------------------------------------------------

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) shape_fail("matmul", a, b);
    Mat c(a.rows, b.cols);
    matmul_acc(c, a, b);
    return c;
}

void matmul_acc(Mat& c, const Mat& a, const Mat& b) {
    if (a.cols != b.rows) shape_fail("matmul", a, b);
    if (c.rows != a.rows || c.cols != b.cols) shape_fail("matmul_acc(out)", c, a);
    const std::size_t n = b.cols;
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* ci = c.data.data() + i * n;
        const double* ai = a.data.data() + i * a.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* bk = b.data.data() + k * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
        }
    }
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    if (a.cols != b.cols) shape_fail("matmul_nt", a, b);
    const std::size_t kk = a.cols;
    Mat c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.data.data() + i * kk;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* bj = b.data.data() + j * kk;
            // Four interleaved partial sums, combined in a fixed order.
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            std::size_t k = 0;
            for (; k + 4 <= kk; k += 4) {
                s0 += ai[k] * bj[k];
                s1 += ai[k + 1] * bj[k + 1];
                s2 += ai[k + 2] * bj[k + 2];
                s3 += ai[k + 3] * bj[k + 3];
            }
            for (; k < kk; ++k) s0 += ai[k] * bj[k];
            c(i, j) = (s0 + s1) + (s2 + s3);
        }
    }
    return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    Mat c(a.cols, b.cols);
    matmul_tn_acc(c, a, b);
    return c;
}

void matmul_tn_acc(Mat& c, const Mat& a, const Mat& b) {
    if (a.rows != b.rows) shape_fail("matmul_tn", a, b);
    if (c.rows != a.cols || c.cols != b.cols) shape_fail("matmul_tn_acc(out)", c, b);
    const std::size_t n = b.cols;
    for (std::size_t t = 0; t < a.rows; ++t) {
        const double* at = a.data.data() + t * a.cols;
        const double* bt = b.data.data() + t * n;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double ati = at[i];
            double* ci = c.data.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += ati * bt[j];
        }
    }
}

Mat transpose(const Mat& a) {
    Mat t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

Mat add(const Mat& a, const Mat& b) {
    if (!a.same_shape(b)) shape_fail("add", a, b);
    Mat c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    return c;
}

Mat sub(const Mat& a, const Mat& b) {
    if (!a.same_shape(b)) shape_fail("sub", a, b);
    Mat c = a;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
    return c;
}

Mat scale(const Mat& a, double s) {
    Mat c = a;
    for (double& v : c.data) v *= s;
    return c;
}

void axpy(Mat& a, double s, const Mat& b) {
    if (a.size() != b.size()) shape_fail("axpy", a, b);
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += s * b.data[i];
}

void add_row_bias(Mat& a, const Mat& bias) {
    if (bias.size() != a.cols) shape_fail("add_row_bias", a, bias);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* ai = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < a.cols; ++j) ai[j] += bias.data[j];
    }
}

void add_col_sums(Mat& out, const Mat& a) {
    if (out.size() != a.cols) shape_fail("add_col_sums", out, a);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* ai = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < a.cols; ++j) out.data[j] += ai[j];
    }
}

double frobenius_norm_sq(const Mat& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return s;
}

double frobenius_norm(const Mat& a) { return std::sqrt(frobenius_norm_sq(a)); }

double max_abs(const Mat& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}

bool all_finite(const Mat& a) {
    return std::all_of(a.data.begin(), a.data.end(), [](double v) { return std::isfinite(v); });
}

// ---- nonlinearities -----------------------------------------------------

double gelu(double x) { return 0.5 * x * std::erfc(-x * std::numbers::sqrt2 * 0.5); }

double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014326779399461;
    return 0.5 * std::erfc(-x * std::numbers::sqrt2 * 0.5) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

Mat gelu(const Mat& a) {
    Mat c = a;
    for (double& v : c.data) v = gelu(v);
    return c;
}

Mat softmax_rows(const Mat& a) {
    Mat c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        auto in = a.row(i);
        auto out = c.row(i);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        const double inv = 1.0 / sum;
        for (double& v : out) v *= inv;
    }
    return c;
}

Mat layernorm(const Mat& x, const Mat& gamma, const Mat& beta, double eps, LayerNormStats& stats) {
    if (gamma.size() != x.cols) shape_fail("layernorm(gamma)", x, gamma);
    if (beta.size() != x.cols) shape_fail("layernorm(beta)", x, beta);
    const std::size_t d = x.cols;
    Mat y(x.rows, d);
    stats.xhat = Mat(x.rows, d);
    stats.rstd.assign(x.rows, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        auto xi = x.row(i);
        double mean = 0.0;
        for (double v : xi) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : xi) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + eps);
        stats.rstd[i] = rstd;
        auto xh = stats.xhat.row(i);
        auto yi = y.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (xi[j] - mean) * rstd;
            yi[j] = xh[j] * gamma.data[j] + beta.data[j];
        }
    }
    return y;
}

Mat layernorm(const Mat& x, const Mat& gamma, const Mat& beta, double eps) {
    LayerNormStats stats;
    return layernorm(x, gamma, beta, eps, stats);
}

// ---- decompositions -----------------------------------------------------

namespace {

// Thin SVD for rows >= cols.
SvdResult svd_tall(const Mat& a) {
    const std::size_t m = a.rows;
    const std::size_t n = a.cols;
    // Work on columns stored contiguously: w[j] is column j of A*V.
    std::vector<std::vector<double>> w(n, std::vector<double>(m));
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) w[j][i] = a(i, j);
        v[j][j] = 1.0;
    }
    constexpr double eps = std::numeric_limits<double>::epsilon();

    auto dot = [](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
        return s;
    };

    double off = 0.0;
    bool converged = n < 2;
    for (int sweep = 0; sweep < kSvdMaxSweeps && !converged; ++sweep) {
        double off_sq = 0.0;
        double pairs = 0.0;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double alpha = dot(w[p], w[p]);
                const double beta = dot(w[q], w[q]);
                const double gamma = dot(w[p], w[q]);
                if (alpha == 0.0 || beta == 0.0) continue;
                const double norm_gamma = std::abs(gamma) / std::sqrt(alpha * beta);
                off_sq += norm_gamma * norm_gamma;
                pairs += 1.0;
                if (norm_gamma <= eps) continue;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double wp = w[p][i];
                    const double wq = w[q][i];
                    w[p][i] = c * wp - s * wq;
                    w[q][i] = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v[p][i];
                    const double vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        off = std::sqrt(off_sq / std::max(pairs, 1.0));
        converged = off < kSvdTolerance;
    }
    if (!converged) {
        throw ConvergenceError("svd: no convergence after " + std::to_string(kSvdMaxSweeps) +
                                   " sweeps, off-diagonal mass " + std::to_string(off),
                               off);
    }

    std::vector<double> sv(n);
    for (std::size_t j = 0; j < n; ++j) sv[j] = std::sqrt(dot(w[j], w[j]));
    std::vector<std::size_t> order(n);
    for (std::size_t j = 0; j < n; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sv[x] > sv[y]; });

    SvdResult res;
    res.u = Mat(m, n);
    res.s.resize(n);
    res.vt = Mat(n, n);
    const double smax = n ? sv[order[0]] : 0.0;
    const double cutoff = smax * eps * static_cast<double>(std::max(m, n));

    std::vector<bool> filled(n, false);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        res.s[k] = sv[j];
        for (std::size_t i = 0; i < n; ++i) res.vt(k, i) = v[j][i];
        if (sv[j] > cutoff && sv[j] > 0.0) {
            for (std::size_t i = 0; i < m; ++i) res.u(i, k) = w[j][i] / sv[j];
            filled[k] = true;
        }
    }
    // Complete left singular vectors of (numerically) zero singular values.
    std::size_t next_basis = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (filled[k]) continue;
        for (;; ++next_basis) {
            if (next_basis >= m) throw ConvergenceError("svd: basis completion failed", 0.0);
            std::vector<double> cand(m, 0.0);
            cand[next_basis] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t c = 0; c < n; ++c) {
                    if (!filled[c]) continue;
                    double proj = 0.0;
                    for (std::size_t i = 0; i < m; ++i) proj += res.u(i, c) * cand[i];
                    for (std::size_t i = 0; i < m; ++i) cand[i] -= proj * res.u(i, c);
                }
            }
            const double nrm = std::sqrt(dot(cand, cand));
            if (nrm > 0.5) {
                for (std::size_t i = 0; i < m; ++i) res.u(i, k) = cand[i] / nrm;
                filled[k] = true;
                ++next_basis;
                break;
            }
        }
    }
    return res;
}

}  // namespace

SvdResult svd(const Mat& a) {
    if (a.rows == 0 || a.cols == 0) throw ShapeError("svd: empty matrix " + a.shape_str());
    if (!all_finite(a)) throw PreconditionError("svd: non-finite input");
    if (a.rows >= a.cols) return svd_tall(a);
    SvdResult t = svd_tall(transpose(a));
    SvdResult res;
    res.s = std::move(t.s);
    res.u = transpose(t.vt);
    res.vt = transpose(t.u);
    return res;
}

Mat qr_orthonormal(const Mat& a) {
    if (a.rows < a.cols) throw ShapeError("qr_orthonormal: needs rows >= cols, got " + a.shape_str());
    const std::size_t m = a.rows;
    const std::size_t n = a.cols;
    Mat q = a;
    for (std::size_t j = 0; j < n; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t c = 0; c < j; ++c) {
                double proj = 0.0;
                for (std::size_t i = 0; i < m; ++i) proj += q(i, c) * q(i, j);
                for (std::size_t i = 0; i < m; ++i) q(i, j) -= proj * q(i, c);
            }
        }
        double nrm = 0.0;
        for (std::size_t i = 0; i < m; ++i) nrm += q(i, j) * q(i, j);
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) throw PreconditionError("qr_orthonormal: rank-deficient input");
        for (std::size_t i = 0; i < m; ++i) q(i, j) /= nrm;
    }
    return q;
}

// ---- RNG ----------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (b * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL);
    splitmix64(s);
    return splitmix64(s);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = std::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = std::rotl(s_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw PreconditionError("Rng::below: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

Rng Rng::derive(std::uint64_t tag) const { return Rng(mix_seed(seed_, tag)); }

Rng Rng::derive(std::string_view tag) const {
    // FNV-1a of the tag.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : tag) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return derive(h);
}

Mat random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Mat m(rows, cols);
    for (double& v : m.data) v = stddev * rng.normal();
    return m;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace adapterlab
