#include "pep/likelihoods.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>

namespace pep {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kTailSwitch = -30.0;

// 1 - 1/z^2 + 3/z^4 - ... truncated where the terms stop mattering for |z| >= 30.
double tail_series(double z) {
    const double iz2 = 1.0 / (z * z);
    double term = 1.0, sum = 1.0;
    for (int k = 1; k <= 7; ++k) {
        term *= -(2.0 * k - 1.0) * iz2;
        sum += term;
    }
    return sum;
}

// Solves f(x) = 0 for f increasing, using Newton steps guarded by a bracket.
template <class F>
double solve_increasing(F&& f, double x0) {
    auto [f0, df0] = f(x0);
    if (f0 == 0.0) return x0;
    double lo, hi;
    double step = 1.0;
    if (f0 < 0.0) {
        lo = x0;
        hi = x0 + step;
        while (f(hi).first < 0.0) {
            lo = hi;
            step *= 2.0;
            hi += step;
            if (step > 1e300) throw NumericalError("root bracket expansion failed");
        }
    } else {
        hi = x0;
        lo = x0 - step;
        while (f(lo).first > 0.0) {
            hi = lo;
            step *= 2.0;
            lo -= step;
            if (step > 1e300) throw NumericalError("root bracket expansion failed");
        }
    }
    double x = std::clamp(x0, lo, hi);
    for (int it = 0; it < 200; ++it) {
        auto [fx, dfx] = f(x);
        if (fx == 0.0) return x;
        if (fx < 0.0) lo = x; else hi = x;
        double xn = (dfx > 0.0 && std::isfinite(dfx)) ? x - fx / dfx : 0.5 * (lo + hi);
        if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
        const double dx = std::abs(xn - x);
        x = xn;
        if (dx <= 4e-16 * std::max(1.0, std::abs(x)) || hi - lo <= 4e-16 * std::max(1.0, std::abs(x)))
            return x;
    }
    return x;
}

// Solves log Phi(x) = c for c <= log(1/2) by Newton from the left, where the
// concavity of log Phi makes the iteration monotone.
double solve_left_branch(double c) {
    double x = -std::sqrt(-2.0 * c);
    for (int it = 0; it < 200; ++it) {
        const double dx = (c - log_normal_cdf(x)) / inv_mills(x);
        x += dx;
        if (std::abs(dx) <= 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    return x;
}

// e(T) = Phi^{-1}(Phi(T)^{1/alpha}): maps a standard normal T to a variable
// whose CDF is Phi^alpha. Also returns e'(T) and e''(T)/e'(T).
struct Warp {
    double alpha;

    void eval(double T, double& e, double& de, double& dlog_de) const {
        if (alpha == 1.0) {
            e = T;
            de = 1.0;
            dlog_de = 0.0;
            return;
        }
        const double lT = log_normal_cdf(T);
        const double c = lT / alpha;
        if (c <= -std::numbers::ln2) {
            e = solve_left_branch(c);
        } else {
            double lp;
            const double upper = T > 0.0 ? std::exp(log_normal_cdf(-T)) : 0.0;
            if (T > 0.0 && upper < 1e-300)
                lp = log_normal_cdf(-T) - std::log(alpha);
            else
                lp = std::log(-std::expm1(c));
            e = -solve_left_branch(lp);
        }
        const double log_de = log_normal_pdf(T) - log_normal_pdf(e) + (1.0 / alpha - 1.0) * lT -
                              std::log(alpha);
        de = std::exp(log_de);
        dlog_de = -T + (1.0 / alpha - 1.0) * inv_mills(T) + e * de;
    }
};

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }

double log_normal_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

double log_normal_cdf(double z) {
    if (z > 0.0) return std::log1p(-0.5 * std::erfc(z / kSqrt2));
    if (z >= kTailSwitch) return std::log(0.5 * std::erfc(-z / kSqrt2));
    return log_normal_pdf(z) - std::log(-z) + std::log(tail_series(z));
}

double inv_mills(double z) {
    if (z >= kTailSwitch) return std::exp(log_normal_pdf(z) - log_normal_cdf(z));
    return -z / tail_series(z);
}

double inverse_log_normal_cdf(double c) {
    if (std::isnan(c) || c > 0.0) throw ArgumentError("inverse_log_normal_cdf: argument must be <= 0");
    if (c == 0.0) return std::numeric_limits<double>::infinity();
    if (std::isinf(c)) return -std::numeric_limits<double>::infinity();
    if (c <= -std::numbers::ln2) return solve_left_branch(c);
    return -solve_left_branch(std::log(-std::expm1(c)));
}

const GaussHermiteRule& gauss_hermite(int Q) {
    if (Q < 2) throw ArgumentError("Gauss-Hermite rule needs at least 2 nodes");
    static std::mutex mu;
    static std::map<int, std::unique_ptr<const GaussHermiteRule>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(Q);
    if (it != cache.end()) return *it->second;

    // Golub-Welsch for the initial nodes, then Newton on the normalised Hermite
    // function psi_Q and Christoffel weights.
    Matrix J = Matrix::Zero(Q, Q);
    for (int k = 1; k < Q; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(0.5 * k);
    Eigen::SelfAdjointEigenSolver<Matrix> es(J);
    Vector x = es.eigenvalues();

    auto psi = [Q](double t, double& psiQ, double& psiQm1, double& sumsq) {
        double p0 = std::pow(std::numbers::pi, -0.25) * std::exp(-0.5 * t * t);
        double p1 = kSqrt2 * t * p0;
        sumsq = p0 * p0;
        if (Q == 1) { psiQ = p1; psiQm1 = p0; return; }
        sumsq += p1 * p1;
        for (int k = 1; k < Q; ++k) {
            const double p2 = std::sqrt(2.0 / (k + 1)) * t * p1 - std::sqrt(double(k) / (k + 1)) * p0;
            p0 = p1;
            p1 = p2;
            if (k + 1 < Q) sumsq += p1 * p1;
        }
        psiQ = p1;
        psiQm1 = p0;
    };

    auto rule = std::make_unique<GaussHermiteRule>();
    rule->nodes.resize(Q);
    rule->weights.resize(Q);
    for (int i = 0; i < Q; ++i) {
        double t = x(i), pQ, pQm1, s;
        for (int it = 0; it < 4; ++it) {
            psi(t, pQ, pQm1, s);
            const double d = std::sqrt(2.0 * Q) * pQm1 - t * pQ;
            if (d == 0.0) break;
            t -= pQ / d;
        }
        psi(t, pQ, pQm1, s);
        rule->nodes(i) = t;
        rule->weights(i) = std::exp(-t * t) / s;
    }
    for (int i = 0; i < Q / 2; ++i) {
        const double a = 0.5 * (rule->nodes(Q - 1 - i) - rule->nodes(i));
        const double w = 0.5 * (rule->weights(i) + rule->weights(Q - 1 - i));
        rule->nodes(i) = -a;
        rule->nodes(Q - 1 - i) = a;
        rule->weights(i) = rule->weights(Q - 1 - i) = w;
    }
    if (Q % 2 == 1) rule->nodes(Q / 2) = 0.0;
    auto [pos, inserted] = cache.emplace(Q, std::move(rule));
    return *pos->second;
}

TiltedMoments gaussian_tilted(double m_cav, double v_cav, double y, double alpha, double sigma2_y) {
    if (!(sigma2_y > 0.0)) throw ArgumentError("noise variance must be positive");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in (0, 1]");
    if (!(v_cav >= 0.0) || !std::isfinite(v_cav)) throw CavityError("invalid cavity variance");
    const double a = v_cav + sigma2_y / alpha;
    const double r = y - m_cav;
    TiltedMoments tm;
    tm.log_z = -0.5 * alpha * std::log(2.0 * std::numbers::pi * sigma2_y) + 0.5 * std::log(sigma2_y) -
               0.5 * std::log(alpha * v_cav + sigma2_y) - 0.5 * r * r / a;
    tm.d1 = r / a;
    tm.d2 = -1.0 / a;
    return tm;
}

TiltedMoments probit_tilted_analytic(double m_cav, double v_cav, double y) {
    if (!(v_cav >= 0.0) || !std::isfinite(v_cav)) throw CavityError("invalid cavity variance");
    const double s = std::sqrt(1.0 + v_cav);
    const double z = y * m_cav / s;
    const double lam = inv_mills(z);
    TiltedMoments tm;
    tm.log_z = log_normal_cdf(z);
    tm.d1 = y * lam / s;
    tm.d2 = -lam * (z + lam) / (s * s);
    return tm;
}

TiltedMoments probit_tilted_quad(double m_cav, double v_cav, double y, double alpha, int Q) {
    if (!(v_cav >= 0.0) || !std::isfinite(v_cav)) throw CavityError("invalid cavity variance");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in (0, 1]");
    if (y != 1.0 && y != -1.0) throw ArgumentError("probit labels must be -1 or +1");
    if (!std::isfinite(m_cav)) throw CavityError("non-finite cavity mean");
    const double m = y * m_cav;
    TiltedMoments tm;
    if (v_cav == 0.0) {
        const double lam = inv_mills(m);
        tm.log_z = alpha * log_normal_cdf(m);
        tm.d1 = y * alpha * lam;
        tm.d2 = -alpha * lam * (m + lam);
        return tm;
    }
    const GaussHermiteRule& rule = gauss_hermite(Q);
    const double s = std::sqrt(v_cav);
    const Warp warp{alpha};

    // The tilted normaliser is P(e(T) <= m + s*eps) for independent standard
    // normals (T, eps). Nodes run along the tangent of the boundary at its point
    // closest to the origin; the normal offset r solves the boundary per node.
    double e, de, dl;
    auto stationarity = [&](double T) {
        warp.eval(T, e, de, dl);
        const double val = T + (e - m) * de / v_cav;
        const double der = 1.0 + (de * de + (e - m) * dl * de) / v_cav;
        return std::pair<double, double>(val, der);
    };
    const double T_star = solve_increasing(stationarity, m / (1.0 + v_cav));
    warp.eval(T_star, e, de, dl);
    const double eps_star = (e - m) / s;
    const double norm = std::hypot(de, s);
    const double nT = de / norm, nE = -s / norm;
    const double tT = s / norm, tE = de / norm;
    const double r0 = T_star * nT + eps_star * nE;

    const Index nq = rule.nodes.size();
    Vector log_terms(nq), r(nq), rp(nq), rpp(nq);
    double upper = 0.0;
    for (Index q = 0; q < nq; ++q) {
        const double tau = kSqrt2 * rule.nodes(q);
        auto boundary = [&](double rr) {
            const double T = tau * tT + rr * nT;
            warp.eval(T, e, de, dl);
            const double val = e - m - s * (tau * tE + rr * nE);
            const double der = de * nT - s * nE;
            return std::pair<double, double>(val, der);
        };
        const double rq = solve_increasing(boundary, r0);
        warp.eval(tau * tT + rq * nT, e, de, dl);
        const double g_r = de * nT - s * nE;
        const double g_rr = dl * de * nT * nT;
        const double w = rule.weights(q) / std::sqrt(std::numbers::pi);
        r(q) = rq;
        rp(q) = 1.0 / g_r;
        rpp(q) = -g_rr / (g_r * g_r * g_r);
        log_terms(q) = std::log(w) + log_normal_cdf(rq);
        upper += w * normal_cdf(-rq);
    }
    const double mx = log_terms.maxCoeff();
    double log_z = mx + std::log((log_terms.array() - mx).exp().sum());
    if (upper < 0.5) log_z = std::log1p(-upper);

    double z1 = 0.0, z2 = 0.0;
    for (Index q = 0; q < nq; ++q) {
        const double omega = std::exp(log_terms(q) - log_z);
        const double lam = inv_mills(r(q));
        z1 += omega * lam * rp(q);
        z2 += omega * lam * (rpp(q) - r(q) * rp(q) * rp(q));
    }
    tm.log_z = log_z;
    tm.d1 = y * z1;
    tm.d2 = z2 - z1 * z1;
    return tm;
}

GaussianLik::GaussianLik(double s2) : sigma2_y(s2) {
    if (!(s2 > 0.0) || !std::isfinite(s2)) throw ArgumentError("noise variance must be positive");
}

ProbitLik::ProbitLik(int q) : Q(q) {
    if (q < 2) throw ArgumentError("quadrature needs at least 2 nodes");
}

Vector to_signed_labels(const Vector& labels) {
    bool zero_one = true, signed_ok = true;
    for (Index i = 0; i < labels.size(); ++i) {
        const double v = labels(i);
        if (v != 0.0 && v != 1.0) zero_one = false;
        if (v != -1.0 && v != 1.0) signed_ok = false;
    }
    if (signed_ok) return labels;
    if (zero_one) return (2.0 * labels.array() - 1.0).matrix();
    throw ArgumentError("labels must be in {0,1} or {-1,+1}");
}

}  // namespace pep
