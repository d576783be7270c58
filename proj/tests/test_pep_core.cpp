#include "oracles/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace pep;

namespace {

struct Moments2 {
    Vector mean;
    Matrix cov;
};

Moments2 moments_of(const LowRankSystem& sys, const Vector& gamma, const Matrix& beta) {
    return {sys.Kuu * gamma, sys.Kuu - sys.Kuu * beta * sys.Kuu};
}

Vector signed_labels(std::mt19937_64& rng, const Matrix& X) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Vector y(X.rows());
    for (Index i = 0; i < X.rows(); ++i) y(i) = (std::sin(2.0 * X(i, 0)) + 0.3 * n01(rng) > 0.0) ? 1.0 : -1.0;
    return y;
}

// A partially converged probit state, so that sites are informative but not at a fixed point.
struct ProbitSetup {
    oracle::Instance in;
    LowRankSystem sys;
    Vector y;
    PosteriorState state;
    std::vector<SiteFactor> sites;
};

ProbitSetup probit_setup(std::uint64_t seed, Index N, Index M, double alpha, int sweeps = 3) {
    std::mt19937_64 rng(seed);
    ProbitSetup s{oracle::random_instance(rng, N, M, 2), {}, {}, {}, {}};
    s.sys = LowRankSystem::build(s.in.X, s.in.Z, s.in.h);
    s.y = signed_labels(rng, s.in.X);
    InitialState init = init_state(M, N);
    s.state = init.state;
    s.sites = init.sites;
    PEPConfig cfg;
    cfg.alpha = alpha;
    const ProbitLik lik;
    for (int i = 0; i < sweeps; ++i) sweep(s.sys, s.state, s.sites, s.y, lik, cfg);
    return s;
}

double min_eig(const Matrix& A) { return Eigen::SelfAdjointEigenSolver<Matrix>(A).eigenvalues().minCoeff(); }

}  // namespace

TEST(PepInit, ZerosAndFlatSites) {
    const InitialState s = init_state(3, 5);
    EXPECT_EQ(s.state.gamma, Vector::Zero(3));
    EXPECT_EQ(s.state.beta, Matrix::Zero(3, 3));
    ASSERT_EQ(s.sites.size(), 5u);
    for (Index n = 0; n < 5; ++n) {
        EXPECT_TRUE(s.sites[n].flat());
        EXPECT_EQ(s.sites[n].g, 0.0);
        EXPECT_EQ(s.sites[n].index, n);
    }
    EXPECT_THROW(init_state(0, 5), ArgumentError);
}

TEST(PepInit, PredictAndEnergyAtPrior) {
    std::mt19937_64 rng(11);
    const oracle::Instance in = oracle::random_instance(rng, 5, 3, 2);
    const LowRankSystem sys = LowRankSystem::build(in.X, in.Z, in.h);
    const InitialState s = init_state(3, 5);
    const Prediction p = predict(in.Z, in.h, s.state, in.X);
    EXPECT_EQ(p.mean.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LT((p.var.array() - in.h.signal_var()).abs().maxCoeff(), 1e-15);
    const std::vector<std::optional<double>> none(5);
    EXPECT_EQ(pep_energy(sys, s.sites, 0.5, none), 0.0);
}

TEST(SiteFactor, NaturalParameterRules) {
    const SiteFactor f = SiteFactor::from_natural(0.0, 0.0, 2);
    EXPECT_TRUE(f.flat());
    const SiteFactor s = SiteFactor::from_natural(4.0, 2.0, 1);
    EXPECT_DOUBLE_EQ(s.v, 0.25);
    EXPECT_DOUBLE_EQ(s.g, 0.5);
    EXPECT_THROW(SiteFactor::from_natural(INFINITY, 0.0, 0), SiteError);
    EXPECT_THROW(SiteFactor::from_natural(0.0, 1.0, 0), SiteError);
    // negative precision is a legal site in EP
    EXPECT_LT(SiteFactor::from_natural(-1.0, 0.0, 0).v, 0.0);
}

TEST(PepConfig, Validation) {
    PEPConfig c;
    EXPECT_NO_THROW(c.validate());
    c.alpha = 1.5;
    EXPECT_THROW(c.validate(), ArgumentError);
    c = PEPConfig{};
    c.tol = 0.0;
    EXPECT_THROW(c.validate(), ArgumentError);
    c = PEPConfig{};
    c.damping = -0.1;
    EXPECT_THROW(c.validate(), ArgumentError);
    c = PEPConfig{};
    c.alpha = 0.0;
    EXPECT_DOUBLE_EQ(c.effective_alpha(), kMinAlpha);
    EXPECT_EQ(c.effective_damping(GaussianLik(1.0)), 1.0);
    EXPECT_EQ(c.effective_damping(ProbitLik()), 0.5);
}

TEST(Delete, FlatSiteLeavesPosterior) {
    ProbitSetup s = probit_setup(12, 10, 4, 0.5);
    SiteFactor flat;
    flat.index = 3;
    const CavityState c = delete_site(s.sys, s.state, flat, 0.5);
    EXPECT_EQ(c.gamma_cav, s.state.gamma);
    EXPECT_EQ(c.beta_cav, s.state.beta);
}

TEST(Delete, IncludeSameFractionRestoresState) {
    for (double alpha : {0.3, 1.0}) {
        ProbitSetup s = probit_setup(13, 12, 4, alpha);
        for (Index n = 0; n < 12; ++n) {
            const CavityState c = delete_site(s.sys, s.state, s.sites[n], alpha);
            const PosteriorState back = include_site(s.sys, c, s.sites[n], s.sites[n], alpha);
            EXPECT_LT(oracle::max_abs(back.gamma - s.state.gamma), 1e-10);
            EXPECT_LT(oracle::max_abs(back.beta - s.state.beta), 1e-10);
        }
    }
}

TEST(Delete, MatchesDenseNaturalParameterDivision) {
    std::mt19937_64 rng(14);
    const oracle::Instance in = oracle::random_instance(rng, 8, 3, 2);
    const LowRankSystem sys = LowRankSystem::build(in.X, in.Z, in.h);
    const GaussianLik lik(in.h.noise_var());
    for (double alpha : {0.25, 1.0}) {
        InitialState init = init_state(3, 8);
        PEPConfig cfg;
        cfg.alpha = alpha;
        sweep(sys, init.state, init.sites, in.y, lik, cfg);
        const Moments2 q = moments_of(sys, init.state.gamma, init.state.beta);
        const Matrix prec = q.cov.inverse();
        const Vector eta = prec * q.mean;
        for (Index n = 0; n < 8; ++n) {
            const SiteFactor& f = init.sites[n];
            const Vector w = sys.W.col(n);
            const Matrix prec_cav = prec - alpha * f.tau() * w * w.transpose();
            const Vector eta_cav = eta - alpha * f.nat_mean() * w;
            const Matrix cov_cav = prec_cav.inverse();
            const Vector mean_cav = cov_cav * eta_cav;
            const CavityState c = delete_site(sys, init.state, f, alpha);
            const Moments2 got = moments_of(sys, c.gamma_cav, c.beta_cav);
            EXPECT_LT(oracle::max_abs(got.mean - mean_cav), 1e-9);
            EXPECT_LT(oracle::max_abs(got.cov - cov_cav), 1e-9);
            EXPECT_NEAR(c.m_cav, w.dot(mean_cav), 1e-9);
            EXPECT_NEAR(c.s_cav, w.dot(cov_cav * w), 1e-9);
            EXPECT_NEAR(c.v_cav, sys.diag_D(n) + c.s_cav, 1e-15);
        }
    }
}

TEST(Project, UninformativeTiltKeepsCavity) {
    ProbitSetup s = probit_setup(15, 6, 3, 0.5);
    const CavityState c = delete_site(s.sys, s.state, s.sites[2], 0.5);
    const PosteriorState p = project(s.sys, c, TiltedMoments{0.0, 0.0, 0.0});
    EXPECT_EQ(p.gamma, c.gamma_cav);
    EXPECT_EQ(p.beta, c.beta_cav);
}

TEST(Project, SinglePointRegression) {
    Matrix X(1, 1);
    X << 0.0;
    Vector y(1);
    y << 1.0;
    const KernelHyper h = KernelHyper::isotropic(1, 1.0, 1.0, 1.0);
    const LowRankSystem sys = LowRankSystem::build(X, X, h);
    InitialState s = init_state(1, 1);
    PEPConfig cfg;
    sweep(sys, s.state, s.sites, y, GaussianLik(1.0), cfg);
    EXPECT_NEAR(s.state.mean_u(sys.Kuu)(0), 0.5, 1e-14);
    EXPECT_NEAR(s.state.cov_u(sys.Kuu)(0, 0), 0.5, 1e-14);
}

TEST(Project, MomentsMatchTiltedQuadrature) {
    for (std::uint64_t seed : {16u, 17u, 18u})
        for (double alpha : {0.2, 0.5, 1.0}) {
            ProbitSetup s = probit_setup(seed, 6, 3, alpha, 2);
            for (Index n = 0; n < 6; ++n) {
                const CavityState c = delete_site(s.sys, s.state, s.sites[n], alpha);
                const TiltedMoments tm = probit_tilted_quad(c.m_cav, c.v_cav, s.y(n), alpha);
                const PosteriorState p = project(s.sys, c, tm);
                const Moments2 got = moments_of(s.sys, p.gamma, p.beta);

                const Moments2 cav = moments_of(s.sys, c.gamma_cav, c.beta_cav);
                const double yn = s.y(n);
                const auto ll = [yn](double f) { return log_normal_cdf(yn * f); };
                const oracle::Moments t = oracle::tilted_moments(ll, c.m_cav, c.v_cav, alpha, 400);
                const Vector cross = cav.cov * s.sys.W.col(n);
                const Vector mean = cav.mean + cross * (t.mean - c.m_cav) / c.v_cav;
                const Matrix cov =
                    cav.cov - cross * cross.transpose() * (1.0 / c.v_cav - t.var / (c.v_cav * c.v_cav));
                EXPECT_LT(oracle::max_abs(got.mean - mean), 1e-7);
                EXPECT_LT(oracle::max_abs(got.cov - cov), 1e-7);
            }
        }
}

TEST(UpdateSite, DampingEqualToPowerMatchesProjection) {
    for (double alpha : {0.4, 1.0}) {
        ProbitSetup s = probit_setup(19, 10, 4, alpha);
        for (Index n = 0; n < 10; ++n) {
            const CavityState c = delete_site(s.sys, s.state, s.sites[n], alpha);
            const TiltedMoments tm = probit_tilted_quad(c.m_cav, c.v_cav, s.y(n), alpha);
            const PosteriorState p = project(s.sys, c, tm);
            const SiteFactor nw = update_site(s.sites[n], c, tm, alpha, alpha);
            const PosteriorState q = include_site(s.sys, c, s.sites[n], nw, alpha);
            EXPECT_LT(oracle::max_abs(p.gamma - q.gamma), 1e-10);
            EXPECT_LT(oracle::max_abs(p.beta - q.beta), 1e-10);
        }
    }
}

TEST(UpdateSite, FlatStartTakesNewFactor) {
    ProbitSetup s = probit_setup(20, 5, 3, 1.0, 0);
    const CavityState c = delete_site(s.sys, s.state, s.sites[0], 1.0);
    const TiltedMoments tm = probit_tilted_quad(c.m_cav, c.v_cav, s.y(0), 1.0);
    const SiteFactor nw = update_site(s.sites[0], c, tm, 1.0, 1.0);
    const double denom = 1.0 + tm.d2 * c.s_cav;
    EXPECT_NEAR(nw.tau(), -tm.d2 / denom, 1e-15);
    EXPECT_NEAR(nw.nat_mean(), (tm.d1 - c.m_cav * tm.d2) / denom, 1e-15);
}

TEST(UpdateSite, DampingComposesInNaturalParameters) {
    ProbitSetup s = probit_setup(21, 6, 3, 0.5);
    const CavityState c = delete_site(s.sys, s.state, s.sites[1], 0.5);
    const TiltedMoments tm = probit_tilted_quad(c.m_cav, c.v_cav, s.y(1), 0.5);
    const SiteFactor twice = update_site(update_site(s.sites[1], c, tm, 0.5, 0.5), c, tm, 0.5, 0.5);
    const SiteFactor once = update_site(s.sites[1], c, tm, 0.5, 0.75);
    EXPECT_NEAR(twice.tau(), once.tau(), 1e-12);
    EXPECT_NEAR(twice.nat_mean(), once.nat_mean(), 1e-12);
}

TEST(UpdateSite, GaussianFixedPointUnchanged) {
    std::mt19937_64 rng(22);
    const oracle::Instance in = oracle::random_instance(rng, 15, 4, 2);
    const GaussianLik lik(in.h.noise_var());
    for (double alpha : {0.25, 0.5, 1.0}) {
        PEPConfig cfg;
        cfg.alpha = alpha;
        const PEPResult r = run_pep(in.X, in.y, in.Z, in.h, lik, cfg);
        const LowRankSystem sys = LowRankSystem::build(in.X, in.Z, in.h);
        for (Index n = 0; n < 15; ++n) {
            const SiteFactor& f = r.sites[n];
            EXPECT_NEAR(f.g, in.y(n), 1e-9 * std::max(1.0, std::abs(in.y(n))));
            const double v = alpha * sys.diag_D(n) + in.h.noise_var();
            EXPECT_NEAR(f.v, v, 1e-9 * v);
            const CavityState c = delete_site(sys, r.state, f, alpha);
            const SiteFactor again = update_site(f, c, lik.tilted(c.m_cav, c.v_cav, in.y(n), alpha), alpha, 1.0);
            EXPECT_NEAR(again.g, f.g, 1e-12 * std::max(1.0, std::abs(f.g)));
            EXPECT_NEAR(again.v, f.v, 1e-12 * f.v);
        }
    }
}

TEST(Sweep, GaussianSinglePass) {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        const oracle::Instance in = oracle::random_instance(rng, 30, 5, 2);
        const LowRankSystem sys = LowRankSystem::build(in.X, in.Z, in.h);
        const GaussianLik lik(in.h.noise_var());
        for (bool parallel : {false, true})
            for (double alpha : {0.25, 0.5, 1.0}) {
                PEPConfig cfg;
                cfg.alpha = alpha;
                cfg.parallel_updates = parallel;
                InitialState s = init_state(5, 30);
                const SweepStats first = sweep(sys, s.state, s.sites, in.y, lik, cfg);
                EXPECT_EQ(first.rejected, 0);
                EXPECT_EQ(first.updated, 30);
                const PosteriorState before = s.state;
                const SweepStats second = sweep(sys, s.state, s.sites, in.y, lik, cfg);
                EXPECT_LE(second.max_change, 1e-10);
                EXPECT_LE(oracle::max_abs(s.state.gamma - before.gamma), 1e-9);
                EXPECT_LE(oracle::max_abs(s.state.beta - before.beta), 1e-9);
            }
    }
}

TEST(Sweep, GaussianStateMatchesAnalyticSites) {
    std::mt19937_64 rng(24);
    const oracle::Instance in = oracle::random_instance(rng, 25, 4, 3);
    const LowRankSystem sys = LowRankSystem::build(in.X, in.Z, in.h);
    const double s2 = in.h.noise_var();
    for (double alpha : {0.3, 1.0}) {
        PEPConfig cfg;
        cfg.alpha = alpha;
        InitialState s = init_state(4, 25);
        sweep(sys, s.state, s.sites, in.y, GaussianLik(s2), cfg);
        std::vector<SiteFactor> analytic(25);
        for (Index n = 0; n < 25; ++n) {
            analytic[n].index = n;
            analytic[n].g = in.y(n);
            analytic[n].v = alpha * sys.diag_D(n) + s2;
        }
        const PosteriorState direct = posterior_from_sites(sys, analytic);
        EXPECT_LT(oracle::max_abs(direct.gamma - s.state.gamma), 1e-9);
        EXPECT_LT(oracle::max_abs(direct.beta - s.state.beta), 1e-9);
        const PosteriorState collapsed = collapsed_posterior(sys, in.y, BlockPartition::singletons(25, alpha));
        EXPECT_LT(oracle::max_abs(collapsed.gamma - s.state.gamma), 1e-9);
        EXPECT_LT(oracle::max_abs(collapsed.beta - s.state.beta), 1e-9);
    }
}

TEST(Sweep, EmptyDataLeavesState) {
    const Matrix X(0, 2);
    Matrix Z(2, 2);
    Z << 0, 0, 1, 1;
    const KernelHyper h = KernelHyper::isotropic(2, 1.0, 1.0, 0.1);
    const LowRankSystem sys = LowRankSystem::build(X, Z, h);
    InitialState s = init_state(2, 0);
    const SweepStats st = sweep(sys, s.state, s.sites, Vector(0), GaussianLik(0.1), PEPConfig{});
    EXPECT_EQ(st.updated, 0);
    EXPECT_EQ(s.state.gamma, Vector::Zero(2));
    const PEPResult r = run_pep(X, Vector(0), Z, h, GaussianLik(0.1), PEPConfig{});
    EXPECT_EQ(r.energy, 0.0);
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.state.beta, Matrix::Zero(2, 2));
}

TEST(Sweep, CovariancePsdAfterEveryUpdate) {
    ProbitSetup s = probit_setup(25, 20, 6, 0.5, 0);
    const ProbitLik lik;
    for (int it = 0; it < 4; ++it)
        for (Index n = 0; n < 20; ++n) {
            PEPConfig cfg;
            cfg.alpha = 0.5;
            const IndexList one{n};
            sweep(s.sys, s.state, s.sites, s.y, lik, cfg, &one);
            const Matrix V = s.state.cov_u(s.sys.Kuu);
            EXPECT_GE(min_eig(V), -1e-9 * V.trace() / 6.0);
        }
}

TEST(Sweep, ParallelAndSequentialShareFixedPoint) {
    std::mt19937_64 rng(26);
    const oracle::Instance in = oracle::random_instance(rng, 40, 6, 2);
    const Vector y = signed_labels(rng, in.X);
    PEPConfig cfg;
    cfg.alpha = 0.5;
    cfg.tol = 1e-10;
    cfg.max_sweeps = 400;
    const PEPResult a = run_pep(in.X, y, in.Z, in.h, ProbitLik(), cfg);
    cfg.parallel_updates = true;
    const PEPResult b = run_pep(in.X, y, in.Z, in.h, ProbitLik(), cfg);
    ASSERT_TRUE(a.converged);
    ASSERT_TRUE(b.converged);
    EXPECT_LT(oracle::max_abs(a.state.gamma - b.state.gamma), 1e-7);
    EXPECT_NEAR(a.energy, b.energy, 1e-7);
}

TEST(RunPep, GaussianConvergesInTwoSweeps) {
    std::mt19937_64 rng(27);
    const oracle::Instance in = oracle::random_instance(rng, 20, 4, 2);
    for (double alpha : {1e-3, 0.25, 0.5, 1.0}) {
        PEPConfig cfg;
        cfg.alpha = alpha;
        const PEPResult r = run_pep(in.X, in.y, in.Z, in.h, GaussianLik(in.h.noise_var()), cfg);
        EXPECT_TRUE(r.converged);
        EXPECT_LE(r.sweeps, 2);
    }
}

TEST(RunPep, ProbitEnergyIncreasesInTrailingSweeps) {
    std::mt19937_64 rng(28);
    const oracle::Instance in = oracle::random_instance(rng, 100, 10, 2);
    const Vector y = signed_labels(rng, in.X);
    PEPConfig cfg;
    cfg.alpha = 0.5;
    cfg.tol = 1e-9;
    cfg.max_sweeps = 60;
    const PEPResult r = run_pep(in.X, y, in.Z, in.h, ProbitLik(), cfg, true);
    ASSERT_GE(r.energy_trace.size(), 6u);
    const std::size_t T = r.energy_trace.size();
    for (std::size_t t = T - 5; t < T; ++t) EXPECT_GE(r.energy_trace[t] - r.energy_trace[t - 1], -1e-6);
}

TEST(Energy, GaussianMatchesCollapsed) {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 3; ++trial) {
        const oracle::Instance in = oracle::random_instance(rng, 40, 5, 2);
        for (double alpha : {0.1, 0.5, 1.0}) {
            PEPConfig cfg;
            cfg.alpha = alpha;
            const PEPResult r = run_pep(in.X, in.y, in.Z, in.h, GaussianLik(in.h.noise_var()), cfg);
            const double collapsed =
                pep_regression_energy(in.X, in.y, in.Z, in.h, BlockPartition::singletons(40, alpha));
            EXPECT_NEAR(r.energy, collapsed, 1e-8 * std::max(1.0, std::abs(collapsed)));
        }
    }
}

TEST(Energy, MissingLogZForInformativeSite) {
    ProbitSetup s = probit_setup(30, 6, 3, 1.0);
    std::vector<std::optional<double>> lz(6, 0.0);
    lz[2].reset();
    EXPECT_THROW(pep_energy(s.sys, s.sites, 1.0, lz), StateError);
}

TEST(Energy, BlockPathMatchesScalarPathForSingletons) {
    std::mt19937_64 rng(31);
    const oracle::Instance in = oracle::random_instance(rng, 20, 4, 2);
    const BlockPartition part = BlockPartition::singletons(20, 0.6);
    const PEPResult blocks = run_pep_blocks(in.X, in.y, in.Z, in.h, part);
    PEPConfig cfg;
    cfg.alpha = 0.6;
    const PEPResult scalar = run_pep(in.X, in.y, in.Z, in.h, GaussianLik(in.h.noise_var()), cfg);
    EXPECT_NEAR(blocks.energy, scalar.energy, 1e-9);
    EXPECT_LT(oracle::max_abs(blocks.state.gamma - scalar.state.gamma), 1e-9);
    ASSERT_EQ(blocks.sites.size(), 20u);
}

TEST(ProbitEp, MatchesDenseEpWhenZEqualsX) {
    std::mt19937_64 rng(32);
    const Index N = 30;
    Matrix X(N, 1);
    for (Index i = 0; i < N; ++i) X(i, 0) = -3.0 + 6.0 * i / (N - 1.0);
    const Vector y = signed_labels(rng, X);
    const KernelHyper h = KernelHyper::isotropic(1, 0.8, 2.0, 0.1);
    const LowRankSystem sys = LowRankSystem::build(X, X, h);
    ASSERT_LT(sys.chol_Kuu.jitter, 1e-8);
    PEPConfig cfg;
    cfg.alpha = 1.0;
    cfg.tol = 1e-12;
    cfg.max_sweeps = 1000;
    const PEPResult r = run_pep(X, y, X, h, ProbitLik(60), cfg);
    ASSERT_TRUE(r.converged);
    const oracle::DenseEP ep = oracle::dense_ep_probit(gram(X, X, h), y);
    const Prediction p = predict(X, h, r.state, X);
    EXPECT_LT((p.mean - ep.mean).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((p.var - ep.cov.diagonal()).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_NEAR(r.energy, ep.log_z, 1e-6);
}

TEST(Predict, VarianceNonNegativeAndClassProbabilities) {
    ProbitSetup s = probit_setup(33, 30, 8, 1.0, 10);
    Matrix grid(100, 2);
    for (Index i = 0; i < 100; ++i) {
        grid(i, 0) = -3.0 + 0.06 * i;
        grid(i, 1) = 3.0 - 0.06 * i;
    }
    const Prediction p = predict(s.in.Z, s.in.h, s.state, grid, true);
    EXPECT_GE(p.var.minCoeff(), 0.0);
    ASSERT_EQ(p.prob.size(), 100);
    for (Index i = 0; i < 100; ++i) {
        EXPECT_GT(p.prob(i), 0.0);
        EXPECT_LT(p.prob(i), 1.0);
        EXPECT_NEAR(p.prob(i), normal_cdf(p.mean(i) / std::sqrt(1.0 + p.var(i))), 1e-15);
    }
    EXPECT_THROW(predict(s.in.Z, s.in.h, s.state, Matrix::Zero(2, 3)), ArgumentError);
}

TEST(Predict, VfeWithFullInducingSetIsExact) {
    std::mt19937_64 rng(34);
    const oracle::Instance in = oracle::random_instance(rng, 25, 1, 2);
    Matrix Xs(10, 2);
    for (Index i = 0; i < 10; ++i) Xs.row(i) << -2.0 + 0.4 * i, 1.0 - 0.2 * i;
    const PosteriorState st = collapsed_posterior(in.X, in.y, in.X, in.h, BlockPartition::vfe_limit(25));
    const Prediction p = predict(in.X, in.h, st, Xs);
    const oracle::DenseGP gp = oracle::dense_exact_gp(in.X, in.y, in.h, Xs);
    EXPECT_LT((p.mean - gp.mean).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((p.var - gp.var).cwiseAbs().maxCoeff(), 1e-8);
}
