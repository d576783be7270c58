#include "oracles/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace pep;

namespace {

double log_gauss(double y, double f, double s2) {
    return -0.5 * std::log(2.0 * std::numbers::pi * s2) - 0.5 * (y - f) * (y - f) / s2;
}

}  // namespace

TEST(NormalCdf, TailsAndTable) {
    EXPECT_NEAR(normal_cdf(0.0), 0.5, 1e-16);
    EXPECT_NEAR(normal_cdf(1.0 / std::sqrt(2.0)), 0.760250, 1e-6);
    EXPECT_NEAR(log_normal_cdf(-40.0), -0.5 * 1600.0 - std::log(40.0) - 0.5 * std::log(2.0 * std::numbers::pi) +
                                           std::log1p(-1.0 / 1600.0 + 3.0 / (1600.0 * 1600.0)),
                1e-8);
    EXPECT_TRUE(std::isfinite(log_normal_cdf(-1e4)));
    EXPECT_NEAR(log_normal_cdf(10.0), 0.0, 1e-20);
    EXPECT_NEAR(inv_mills(-30.0), 30.0, 0.04);
    EXPECT_GT(inv_mills(-30.0), 30.0);
    for (double c : {-1e-8, -0.1, -1.0, -10.0, -200.0})
        EXPECT_NEAR(log_normal_cdf(inverse_log_normal_cdf(c)), c, 1e-10 * std::max(1.0, std::abs(c)));
}

TEST(GaussHermite, MatchesEigenRule) {
    for (int Q : {2, 5, 20, 60}) {
        const GaussHermiteRule& r = gauss_hermite(Q);
        Vector x, w;
        oracle::gauss_hermite_eigen(Q, x, w);
        ASSERT_EQ(r.nodes.size(), Q);
        std::vector<std::pair<double, double>> a, b;
        for (int i = 0; i < Q; ++i) {
            a.emplace_back(r.nodes(i), r.weights(i));
            b.emplace_back(x(i), w(i));
        }
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        for (int i = 0; i < Q; ++i) {
            EXPECT_NEAR(a[i].first, b[i].first, 1e-10);
            EXPECT_NEAR(a[i].second, b[i].second, 1e-10 * std::max(1.0, b[i].second) + 1e-14);
        }
        EXPECT_NEAR(r.weights.sum(), std::sqrt(std::numbers::pi), 1e-12);
    }
    EXPECT_EQ(&gauss_hermite(20), &gauss_hermite(20));
}

TEST(GaussianTilted, SymmetricResidualAndDeltaCavity) {
    EXPECT_EQ(gaussian_tilted(0.7, 0.4, 0.7, 0.5, 0.3).d1, 0.0);
    const TiltedMoments t = gaussian_tilted(0.2, 0.0, 1.1, 1.0, 0.5);
    EXPECT_NEAR(t.log_z, log_gauss(1.1, 0.2, 0.5), 1e-14);
}

TEST(GaussianTilted, MatchesQuadratureExample) {
    const TiltedMoments t = gaussian_tilted(0.0, 1.0, 1.0, 0.5, 1.0);
    const auto ll = [](double f) { return log_gauss(1.0, f, 1.0); };
    const oracle::Moments q = oracle::tilted_moments(ll, 0.0, 1.0, 0.5, 400);
    EXPECT_NEAR(t.log_z, q.log_z, 1e-10);
}

TEST(GaussianTilted, ExactAcrossGrid) {
    for (double m : {-3.0, -0.5, 0.0, 1.5})
        for (double v : {0.01, 0.5, 2.0, 10.0})
            for (double alpha : {0.1, 0.5, 1.0})
                for (double s2 : {0.05, 1.0}) {
                    const double y = 0.4;
                    const TiltedMoments t = gaussian_tilted(m, v, y, alpha, s2);
                    const auto ll = [&](double f) { return log_gauss(y, f, s2); };
                    const oracle::Moments q = oracle::tilted_moments_simpson(ll, m, v, alpha);
                    EXPECT_NEAR(t.log_z, q.log_z, 1e-10);
                    // tilted mean m + v d1 and variance v + v^2 d2
                    EXPECT_NEAR(m + v * t.d1, q.mean, 1e-9);
                    EXPECT_NEAR(v + v * v * t.d2, q.var, 1e-9);
                    EXPECT_LE(t.d2, 0.0);
                }
}

TEST(GaussianTilted, RejectsBadArguments) {
    EXPECT_THROW(gaussian_tilted(0, -1e-3, 0, 1, 1), CavityError);
    EXPECT_THROW(gaussian_tilted(0, NAN, 0, 1, 1), CavityError);
    EXPECT_THROW(gaussian_tilted(0, 1, 0, 0.0, 1), ArgumentError);
    EXPECT_THROW(gaussian_tilted(0, 1, 0, 1.5, 1), ArgumentError);
    EXPECT_THROW(GaussianLik{0.0}, ArgumentError);
    EXPECT_THROW(GaussianLik{INFINITY}, ArgumentError);
    EXPECT_THROW(ProbitLik{1}, ArgumentError);
}

TEST(ProbitAnalytic, KnownValues) {
    EXPECT_NEAR(probit_tilted_analytic(0.0, 0.0, 1.0).log_z, std::log(0.5), 1e-15);
    EXPECT_NEAR(std::exp(probit_tilted_analytic(1.0, 1.0, 1.0).log_z), 0.760250, 1e-6);
    const TiltedMoments sat = probit_tilted_analytic(60.0, 1.0, 1.0);
    EXPECT_NEAR(sat.log_z, 0.0, 1e-15);
    EXPECT_NEAR(sat.d1, 0.0, 1e-15);
    const TiltedMoments far = probit_tilted_analytic(-60.0, 1.0, 1.0);
    EXPECT_TRUE(std::isfinite(far.log_z) && std::isfinite(far.d1) && std::isfinite(far.d2));
    EXPECT_LE(far.d2, 0.0);
}

TEST(ProbitAnalytic, MatchesSimpsonMoments) {
    const auto ll = [](double f) { return log_normal_cdf(f); };
    for (double m : {-3.0, 0.0, 0.8, 2.5})
        for (double v : {0.1, 1.0, 10.0}) {
            const TiltedMoments t = probit_tilted_analytic(m, v, 1.0);
            const oracle::Moments q = oracle::tilted_moments_simpson(ll, m, v, 1.0);
            EXPECT_NEAR(t.log_z, q.log_z, 1e-10);
            EXPECT_NEAR(m + v * t.d1, q.mean, 1e-9);
            EXPECT_NEAR(v + v * v * t.d2, q.var, 1e-9);
        }
}

TEST(ProbitQuad, SymmetricMeanGivesHalf) {
    for (double v : {0.01, 1.0, 50.0}) {
        EXPECT_NEAR(probit_tilted_quad(0.0, v, 1.0, 1.0).log_z, std::log(0.5), 1e-12);
        EXPECT_NEAR(probit_tilted_quad(0.0, v, -1.0, 1.0).log_z, std::log(0.5), 1e-12);
    }
}

TEST(ProbitQuad, MatchesAnalyticAtAlphaOne) {
    for (double m = -4.0; m <= 4.0001; m += 0.5)
        for (double v : {0.1, 1.0, 10.0})
            for (double y : {-1.0, 1.0}) {
                const TiltedMoments q = probit_tilted_quad(m, v, y, 1.0, 60);
                const TiltedMoments a = probit_tilted_analytic(m, v, y);
                EXPECT_NEAR(q.log_z, a.log_z, 1e-10) << m << " " << v;
                EXPECT_NEAR(q.d1, a.d1, 1e-10) << m << " " << v;
                EXPECT_NEAR(q.d2, a.d2, 1e-10) << m << " " << v;
            }
}

TEST(ProbitQuad, DerivativesMatchFiniteDifferences) {
    const double step = 1e-5;
    for (double m : {-3.0, -1.0, 0.0, 0.7, 2.0})
        for (double v : {0.05, 1.0, 8.0})
            for (double alpha : {0.1, 0.5, 1.0}) {
                const TiltedMoments t = probit_tilted_quad(m, v, 1.0, alpha);
                const TiltedMoments p = probit_tilted_quad(m + step, v, 1.0, alpha);
                const TiltedMoments n = probit_tilted_quad(m - step, v, 1.0, alpha);
                EXPECT_NEAR(t.d1, (p.log_z - n.log_z) / (2 * step), 1e-6);
                EXPECT_NEAR(t.d2, (p.d1 - n.d1) / (2 * step), 1e-6);
                // derivative in v follows from d1, d2
                const TiltedMoments vp = probit_tilted_quad(m, v + step, 1.0, alpha);
                const TiltedMoments vn = probit_tilted_quad(m, v - step, 1.0, alpha);
                EXPECT_NEAR(t.dlogz_dv(), (vp.log_z - vn.log_z) / (2 * step), 1e-6);
            }
}

TEST(ProbitQuad, MatchesBruteForceForFractionalPower) {
    const auto ll = [](double f) { return log_normal_cdf(f); };
    for (double m : {-5.0, -2.0, 0.0, 1.0, 4.0})
        for (double v : {1e-3, 0.3, 3.0, 10.0})
            for (double alpha : {0.1, 0.5}) {
                const TiltedMoments t = probit_tilted_quad(m, v, 1.0, alpha);
                const oracle::Moments q = oracle::tilted_moments_simpson(ll, m, v, alpha);
                EXPECT_NEAR(t.log_z, q.log_z, 1e-9);
                EXPECT_NEAR(m + v * t.d1, q.mean, 1e-8);
                EXPECT_NEAR(v + v * v * t.d2, q.var, 1e-8);
            }
}

TEST(ProbitQuad, ConvergesInNodeCount) {
    for (double m = -6.0; m <= 6.0001; m += 1.0)
        for (double v : {1e-3, 0.1, 1.0, 10.0})
            for (double alpha : {0.1, 0.5, 1.0}) {
                const double a = probit_tilted_quad(m, v, 1.0, alpha, 20).log_z;
                const double b = probit_tilted_quad(m, v, 1.0, alpha, 100).log_z;
                EXPECT_LE(std::abs(a - b), 1e-8) << m << " " << v << " " << alpha;
            }
}

TEST(ProbitQuad, LogConcave) {
    for (double m = -6.0; m <= 6.0001; m += 0.75)
        for (double v : {1e-3, 0.1, 1.0, 10.0})
            for (double alpha : {0.1, 0.5, 1.0}) {
                EXPECT_LE(probit_tilted_quad(m, v, 1.0, alpha).d2, 0.0);
                EXPECT_LE(probit_tilted_analytic(m, v, 1.0).d2, 0.0);
            }
}

TEST(ProbitQuad, SmallPowerApproachesExpectedLogLik) {
    const double alpha = 1e-4;
    const auto ll = [](double f) { return log_normal_cdf(f); };
    Vector x, w;
    oracle::gauss_hermite_eigen(200, x, w);
    for (double m : {-2.0, 0.0, 1.5})
        for (double v : {0.1, 1.0, 4.0}) {
            const double lhs = probit_tilted_quad(m, v, 1.0, alpha).log_z / alpha;
            double e1 = 0.0, e2 = 0.0;
            for (Index q = 0; q < x.size(); ++q) {
                const double l = ll(m + std::sqrt(2.0 * v) * x(q));
                e1 += w(q) / std::sqrt(std::numbers::pi) * l;
                e2 += w(q) / std::sqrt(std::numbers::pi) * l * l;
            }
            // the gap is alpha Var[log lik] / 2 to leading order
            const double var = e2 - e1 * e1;
            EXPECT_NEAR(lhs - e1, 0.5 * alpha * var, 1e-2 * alpha * var + 1e-9);
            if (v <= 1.0) EXPECT_NEAR(lhs, e1, 1e-3);
        }
}

TEST(ProbitQuad, DeltaCavityAndErrors) {
    const TiltedMoments t = probit_tilted_quad(0.3, 0.0, -1.0, 0.5);
    EXPECT_NEAR(t.log_z, 0.5 * log_normal_cdf(-0.3), 1e-14);
    EXPECT_THROW(probit_tilted_quad(0.0, 1.0, 0.0, 1.0), ArgumentError);
    EXPECT_THROW(probit_tilted_quad(0.0, -1.0, 1.0, 1.0), CavityError);
    EXPECT_THROW(probit_tilted_quad(NAN, 1.0, 1.0, 1.0), CavityError);
}

TEST(Labels, SignedConversion) {
    Vector a(3), b(3), c(3);
    a << 0, 1, 1;
    b << -1, 1, -1;
    c << 0, 2, 1;
    EXPECT_EQ(to_signed_labels(a), (Vector(3) << -1, 1, 1).finished());
    EXPECT_EQ(to_signed_labels(b), b);
    EXPECT_THROW(to_signed_labels(c), ArgumentError);
}
