#include "adapterlab/theory.hpp"

#include <cmath>

#include "adapterlab/errors.hpp"

namespace adapterlab {

namespace {

void require_decay_exponent(double p, const char* op) {
    if (!(p > 0.5))
        throw PreconditionError(std::string(op) + ": decay exponent p must exceed 1/2 for a finite tail, got " +
                                std::to_string(p));
}

// U[:, :r] diag(s[:r]) Vt[:r, :]
Mat compose(const Mat& u, const std::vector<double>& s, const Mat& vt, std::size_t r) {
    Mat us(u.rows, r);
    for (std::size_t i = 0; i < u.rows; ++i)
        for (std::size_t k = 0; k < r; ++k) us(i, k) = u(i, k) * s[k];
    Mat vr(r, vt.cols);
    std::copy(vt.data.begin(), vt.data.begin() + static_cast<std::ptrdiff_t>(r * vt.cols), vr.data.begin());
    return matmul(us, vr);
}

}  // namespace

Spectrum Spectrum::power_law(std::size_t d, double c, double p) {
    if (!(c > 0.0)) throw PreconditionError("power_law: C must be > 0");
    require_decay_exponent(p, "power_law");
    Spectrum s;
    s.sigmas.resize(d);
    for (std::size_t i = 0; i < d; ++i) s.sigmas[i] = c * std::pow(static_cast<double>(i + 1), -p);
    s.c_decay = c;
    s.p_decay = p;
    return s;
}

void Spectrum::validate() const {
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        if (!(sigmas[i] >= 0.0)) throw PreconditionError("spectrum: negative singular value");
        if (i && sigmas[i] > sigmas[i - 1]) throw PreconditionError("spectrum: not sorted non-increasing");
    }
}

double Spectrum::tail_energy(std::size_t r) const {
    double s = 0.0;
    for (std::size_t i = sigmas.size(); i-- > r;) s += sigmas[i] * sigmas[i];
    return s;
}

double Spectrum::total_energy() const { return tail_energy(0); }

ShiftMatrix make_shift(std::size_t d, double c_decay, double p_decay, Rng& rng) {
    if (d < 1) throw PreconditionError("make_shift: d must be >= 1");
    Spectrum spec = Spectrum::power_law(d, c_decay, p_decay);
    Mat u = qr_orthonormal(random_normal(d, d, 1.0, rng));
    Mat v = qr_orthonormal(random_normal(d, d, 1.0, rng));
    if (d == 1) {
        u = Mat::identity(1);
        v = Mat::identity(1);
    }
    ShiftMatrix sh;
    sh.u = std::move(u);
    sh.vt = transpose(v);
    sh.spectrum = std::move(spec);
    sh.delta = compose(sh.u, sh.spectrum.sigmas, sh.vt, d);
    return sh;
}

ShiftMatrix shift_from_factors(const Mat& u, std::vector<double> sigmas, const Mat& vt) {
    const std::size_t d = sigmas.size();
    if (u.rows != d || u.cols != d || vt.rows != d || vt.cols != d)
        throw ShapeError("shift_from_factors: factors " + u.shape_str() + ", " + vt.shape_str() + " for " +
                         std::to_string(d) + " singular values");
    ShiftMatrix sh;
    sh.u = u;
    sh.vt = vt;
    sh.spectrum.sigmas = std::move(sigmas);
    sh.spectrum.validate();
    sh.delta = compose(sh.u, sh.spectrum.sigmas, sh.vt, d);
    return sh;
}

Mat truncate(const ShiftMatrix& shift, std::size_t r) {
    if (r > shift.dim())
        throw PreconditionError("truncate: rank " + std::to_string(r) + " exceeds d=" + std::to_string(shift.dim()));
    if (r == 0) return Mat(shift.dim(), shift.dim());
    return compose(shift.u, shift.spectrum.sigmas, shift.vt, r);
}

AdapterParams constructive_adapter(const ShiftMatrix& shift, std::size_t r, double alpha) {
    const std::size_t d = shift.dim();
    if (r < 1 || r > d)
        throw PreconditionError("constructive_adapter: rank must satisfy 1 <= r <= " + std::to_string(d));
    if (!(alpha > 0.0)) throw PreconditionError("constructive_adapter: alpha must be > 0");
    AdapterParams p;
    p.rank = r;
    p.alpha = alpha;
    p.activation = Activation::Linear;
    p.w_up = Mat(d, r);
    p.w_down = Mat(r, d);
    p.b_down = Mat(r, 1);
    p.b_up = Mat(d, 1);
    for (std::size_t k = 0; k < r; ++k) {
        const double root = std::sqrt(shift.spectrum.sigmas[k]);
        for (std::size_t i = 0; i < d; ++i) {
            p.w_up(i, k) = shift.u(i, k) * root / alpha;
            p.w_down(k, i) = root * shift.vt(k, i);
        }
    }
    return p;
}

Mat adapter_linear_map(const AdapterParams& p) { return scale(matmul(p.w_up, p.w_down), p.alpha); }

double approx_bound(const ShiftMatrix& shift, std::size_t r, const BoundInputs& b) {
    if (r > shift.dim()) throw PreconditionError("approx_bound: rank exceeds d");
    return b.b_norm * b.b_norm * shift.spectrum.tail_energy(r);
}

namespace {

std::vector<double> sphere_draw(std::size_t d, double radius, Rng& rng) {
    std::vector<double> h(d);
    double nrm = 0.0;
    do {
        nrm = 0.0;
        for (double& v : h) {
            v = rng.normal();
            nrm += v * v;
        }
    } while (nrm == 0.0);
    const double s = radius / std::sqrt(nrm);
    for (double& v : h) v *= s;
    return h;
}

MonteCarloResult finish(double sum, std::size_t n, double bound) {
    MonteCarloResult r;
    r.empirical_mse = sum / static_cast<double>(n);
    r.bound = bound;
    r.limit = bound * (1.0 + 3.0 / std::sqrt(static_cast<double>(n)));
    r.pass = r.empirical_mse <= r.limit;
    return r;
}

}  // namespace

MonteCarloResult verify_bound_monte_carlo(const ShiftMatrix& shift, std::size_t r, double b, std::size_t n_draws,
                                          Rng& rng) {
    if (n_draws < 1) throw PreconditionError("verify_bound_monte_carlo: n_draws must be >= 1");
    const std::size_t d = shift.dim();
    const Mat residual = sub(shift.delta, truncate(shift, r));
    double sum = 0.0;
    for (std::size_t t = 0; t < n_draws; ++t) {
        const std::vector<double> h = sphere_draw(d, b, rng);
        for (std::size_t i = 0; i < d; ++i) {
            double e = 0.0;
            for (std::size_t j = 0; j < d; ++j) e += residual(i, j) * h[j];
            sum += e * e;
        }
    }
    return finish(sum, n_draws, approx_bound(shift, r, {b, r, n_draws, 1}));
}

std::vector<MonteCarloResult> verify_bound_monte_carlo_all_ranks(const ShiftMatrix& shift, double b,
                                                                 std::size_t n_draws, Rng& rng) {
    if (n_draws < 1) throw PreconditionError("verify_bound_monte_carlo: n_draws must be >= 1");
    const std::size_t d = shift.dim();
    const auto& s = shift.spectrum.sigmas;
    std::vector<double> sums(d + 1, 0.0);
    std::vector<double> coef(d), res(d);
    for (std::size_t t = 0; t < n_draws; ++t) {
        const std::vector<double> h = sphere_draw(d, b, rng);
        for (std::size_t k = 0; k < d; ++k) {
            double c = 0.0;
            for (std::size_t j = 0; j < d; ++j) c += shift.vt(k, j) * h[j];
            coef[k] = s[k] * c;
        }
        // (Delta - Delta_r) h = sum_{k >= r} sigma_k (v_k . h) u_k, built from k = d-1 down.
        std::fill(res.begin(), res.end(), 0.0);
        for (std::size_t r = d; r-- > 0;) {
            double nrm = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                res[i] += coef[r] * shift.u(i, r);
                nrm += res[i] * res[i];
            }
            sums[r] += nrm;
        }
    }
    std::vector<MonteCarloResult> out(d + 1);
    for (std::size_t r = 0; r <= d; ++r) out[r] = finish(sums[r], n_draws, approx_bound(shift, r, {b, r, n_draws, 1}));
    return out;
}

double tail_decay(std::size_t r, double c_decay, double p_decay) {
    if (r < 1) throw PreconditionError("tail_decay: r must be >= 1");
    if (!(c_decay > 0.0)) throw PreconditionError("tail_decay: C must be > 0");
    require_decay_exponent(p_decay, "tail_decay");
    const double q = 2.0 * p_decay;
    // Explicit terms r+1..n, Euler-Maclaurin remainder for i > n.
    const std::size_t n = r + 256;
    const double nn = static_cast<double>(n);
    const double f_n = std::pow(nn, -q);
    double remainder = std::pow(nn, 1.0 - q) / (q - 1.0) - 0.5 * f_n + q * f_n / nn / 12.0 -
                       q * (q + 1) * (q + 2) * f_n / (nn * nn * nn) / 720.0 +
                       q * (q + 1) * (q + 2) * (q + 3) * (q + 4) * f_n / std::pow(nn, 5) / 30240.0;
    double sum = remainder;
    for (std::size_t i = n; i > r; --i) sum += std::pow(static_cast<double>(i), -q);
    return c_decay * std::sqrt(sum);
}

ElbowReport elbow_check(const std::vector<std::pair<std::size_t, double>>& curve) {
    if (curve.size() < 3) throw PreconditionError("elbow_check: needs at least 3 points");
    ElbowReport rep;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        if (i && curve[i].first <= curve[i - 1].first)
            throw PreconditionError("elbow_check: ranks must be strictly increasing");
        rep.ranks.push_back(curve[i].first);
        if (i) rep.increments.push_back(curve[i].second - curve[i - 1].second);
    }
    rep.first_increment = rep.increments.front();
    rep.last_increment = rep.increments.back();
    rep.preceding_total = curve[curve.size() - 2].second - curve.front().second;
    rep.pass = rep.last_increment <= rep.preceding_total;
    rep.pass_strict = rep.last_increment <= rep.first_increment;
    return rep;
}

}  // namespace adapterlab
