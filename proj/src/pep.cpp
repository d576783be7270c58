#include "pep/pep.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace pep {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Whitened site summary: A = I + Phi T Phi^T, b = Phi h.
struct Whitened {
    Eigen::LLT<Matrix> chol_A;
    Vector c;     // L_A^{-1} b
    Matrix Psi;   // L_A^{-1} Phi
    double logdet_A = 0.0;
};

Whitened whiten(const Matrix& Phi, const Matrix& A, const Vector& b) {
    Whitened w;
    w.chol_A.compute(A);
    if (w.chol_A.info() != Eigen::Success)
        throw NumericalError("site precision leaves the posterior covariance indefinite");
    const Matrix L = w.chol_A.matrixL();
    w.logdet_A = 2.0 * L.diagonal().array().log().sum();
    w.c = w.chol_A.matrixL().solve(b);
    w.Psi = w.chol_A.matrixL().solve(Phi);
    return w;
}

void site_natural(const std::vector<SiteFactor>& sites, Vector& tau, Vector& h) {
    const Index N = static_cast<Index>(sites.size());
    tau.resize(N);
    h.resize(N);
    for (Index n = 0; n < N; ++n) {
        tau(n) = sites[n].tau();
        h(n) = sites[n].nat_mean();
    }
}

PosteriorState state_from_A(const LowRankSystem& sys, const Matrix& A, const Vector& b) {
    const Index M = sys.M();
    Eigen::LLT<Matrix> chol(A);
    if (chol.info() != Eigen::Success)
        throw NumericalError("site precision leaves the posterior covariance indefinite");
    const auto Lu = sys.chol_Kuu.L.triangularView<Eigen::Lower>();
    PosteriorState s;
    s.gamma = Lu.transpose().solve(chol.solve(b));
    Matrix E = Matrix::Identity(M, M) - chol.solve(Matrix::Identity(M, M));
    E = 0.5 * (E + E.transpose()).eval();
    Matrix Y = Lu.transpose().solve(E);              // Lu^{-T} E
    s.beta = Lu.transpose().solve(Y.transpose());    // Lu^{-T} E Lu^{-1}
    s.beta = 0.5 * (s.beta + s.beta.transpose()).eval();
    return s;
}

// Rank-1 natural-parameter change (dtau, dh) on w_n^T u applied to a state whose
// marginal of w_n^T u has mean mu and variance s; p = w_n - beta k_n.
void rank1_update(PosteriorState& st, const Vector& p, double mu, double s, double dtau, double dh) {
    const double denom = 1.0 + dtau * s;
    if (!(denom > 0.0)) throw NumericalError("rank-1 update leaves the posterior covariance indefinite");
    st.beta.noalias() += (dtau / denom) * p * p.transpose();
    st.gamma += ((dh - dtau * mu) / denom) * p;
}

double log_gauss_ratio_scalar(double tau, double g, double mu, double s, double alpha, double& c_out) {
    // G(cavity) - G(q) for removing an alpha-fraction of a scalar site with
    // precision tau and mean g from a marginal N(mu, s).
    const double P = alpha * tau;
    const double c = 1.0 - P * s;
    c_out = c;
    if (!(c > 0.0)) throw CavityError("cavity precision is not positive");
    const double e = mu - P * g * s;
    return -0.5 * std::log(c) + 0.5 * (-2.0 * P * g * mu + P * P * g * g * s + (P / c) * e * e);
}

}  // namespace

SiteFactor SiteFactor::from_natural(double tau, double h, Index index) {
    if (!std::isfinite(tau) || !std::isfinite(h))
        throw SiteError("site " + std::to_string(index) + " has zero variance");
    SiteFactor s;
    s.index = index;
    if (tau == 0.0) {
        if (h != 0.0) throw SiteError("site " + std::to_string(index) + " has infinite mean");
        return s;
    }
    s.v = 1.0 / tau;
    s.g = h / tau;
    return s;
}

void PEPConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in (0, 1]");
    for (double a : alpha_per_block)
        if (!(a > 0.0 && a <= 1.0)) throw ArgumentError("block powers must lie in (0, 1]");
    if (!(damping >= 0.0 && damping <= 1.0)) throw ArgumentError("damping must lie in (0, 1]");
    if (!(tol > 0.0)) throw ArgumentError("tol must be positive");
    if (max_sweeps < 0) throw ArgumentError("max_sweeps must be non-negative");
    if (minibatch_size < 0) throw ArgumentError("minibatch_size must be non-negative");
}

double PEPConfig::effective_alpha() const { return std::max(alpha, kMinAlpha); }

double PEPConfig::effective_damping(const Likelihood& lik) const {
    if (damping > 0.0) return damping;
    return lik.is_gaussian() ? 1.0 : 0.5;
}

InitialState init_state(Index M, Index N) {
    if (M < 1) throw ArgumentError("need at least one pseudo-point");
    if (N < 0) throw ArgumentError("negative data count");
    InitialState s;
    s.state.gamma = Vector::Zero(M);
    s.state.beta = Matrix::Zero(M, M);
    s.sites.resize(N);
    for (Index n = 0; n < N; ++n) s.sites[n].index = n;
    return s;
}

CavityState delete_site(const LowRankSystem& sys, const PosteriorState& state, const SiteFactor& site,
                        double alpha) {
    const Index n = site.index;
    const auto k = sys.Kuf.col(n);
    const auto w = sys.W.col(n);
    const Vector bk = state.beta * k;
    const double mu = k.dot(state.gamma);
    const double s = std::max(0.0, k.dot(w) - k.dot(bk));

    CavityState c;
    c.index = n;
    if (site.flat()) {
        c.gamma_cav = state.gamma;
        c.beta_cav = state.beta;
        c.m_cav = mu;
        c.s_cav = s;
    } else {
        const double P = alpha * site.tau();
        const double denom = 1.0 - P * s;
        if (!(denom > 0.0))
            throw CavityError("cavity variance is not positive at datum " + std::to_string(n));
        const double d2t = P / denom;
        const double d1t = (mu - site.g) * d2t;
        const Vector p = w - bk;
        c.gamma_cav = state.gamma + p * d1t;
        c.beta_cav = state.beta;
        c.beta_cav.noalias() -= d2t * p * p.transpose();
        c.m_cav = mu + s * d1t;
        c.s_cav = s + d2t * s * s;
    }
    c.v_cav = sys.diag_D(n) + c.s_cav;
    if (!(c.v_cav >= 0.0) || !std::isfinite(c.v_cav))
        throw CavityError("cavity variance is not positive at datum " + std::to_string(n));
    return c;
}

PosteriorState project(const LowRankSystem& sys, const CavityState& cavity, const TiltedMoments& tm) {
    if (!std::isfinite(tm.d1) || !std::isfinite(tm.d2))
        throw NumericalError("non-finite tilted moments");
    const Index n = cavity.index;
    if (1.0 + tm.d2 * cavity.s_cav < -1e-12)
        throw NumericalError("projection leaves the posterior covariance indefinite");
    const Vector p = sys.W.col(n) - cavity.beta_cav * sys.Kuf.col(n);
    PosteriorState s;
    s.gamma = cavity.gamma_cav + p * tm.d1;
    s.beta = cavity.beta_cav;
    s.beta.noalias() -= tm.d2 * p * p.transpose();
    return s;
}

SiteFactor update_site(const SiteFactor& old, const CavityState& cavity, const TiltedMoments& tm,
                       double alpha, double damping) {
    const double denom = 1.0 + tm.d2 * cavity.s_cav;
    if (!(denom > 0.0)) throw SiteError("site " + std::to_string(cavity.index) + " has zero variance");
    const double tau_prop = -tm.d2 / denom / alpha;
    const double h_prop = (tm.d1 - cavity.m_cav * tm.d2) / denom / alpha;
    const double tau = (1.0 - damping) * old.tau() + damping * tau_prop;
    const double h = (1.0 - damping) * old.nat_mean() + damping * h_prop;
    return SiteFactor::from_natural(tau, h, cavity.index);
}

PosteriorState include_site(const LowRankSystem& sys, const CavityState& cavity, const SiteFactor& old,
                            const SiteFactor& updated, double alpha) {
    const Index n = cavity.index;
    const double dtau = updated.tau() - (1.0 - alpha) * old.tau();
    const double dh = updated.nat_mean() - (1.0 - alpha) * old.nat_mean();
    PosteriorState s{cavity.gamma_cav, cavity.beta_cav};
    const Vector p = sys.W.col(n) - cavity.beta_cav * sys.Kuf.col(n);
    rank1_update(s, p, cavity.m_cav, cavity.s_cav, dtau, dh);
    return s;
}

PosteriorState posterior_from_sites(const LowRankSystem& sys, const std::vector<SiteFactor>& sites) {
    if (static_cast<Index>(sites.size()) != sys.N()) throw ArgumentError("one site per datum is required");
    Vector tau, h;
    site_natural(sites, tau, h);
    const Index M = sys.M();
    Matrix A = Matrix::Identity(M, M);
    A.noalias() += sys.Phi * tau.asDiagonal() * sys.Phi.transpose();
    return state_from_A(sys, A, sys.Phi * h);
}

PosteriorState posterior_from_block_sites(const LowRankSystem& sys, const std::vector<BlockSite>& sites) {
    const Index M = sys.M();
    Matrix A = Matrix::Identity(M, M);
    Vector b = Vector::Zero(M);
    for (const auto& site : sites) {
        const Index nb = static_cast<Index>(site.idx.size());
        Matrix Pb(M, nb);
        for (Index i = 0; i < nb; ++i) Pb.col(i) = sys.Phi.col(site.idx[i]);
        Eigen::LLT<Matrix> cv(site.V);
        if (cv.info() != Eigen::Success) throw StateError("block site covariance is not positive definite");
        A.noalias() += Pb * cv.solve(Pb.transpose());
        b.noalias() += Pb * cv.solve(site.g);
    }
    A = 0.5 * (A + A.transpose()).eval();
    return state_from_A(sys, A, b);
}

SweepStats sweep(const LowRankSystem& sys, PosteriorState& state, std::vector<SiteFactor>& sites,
                 const Vector& y, const Likelihood& lik, const PEPConfig& cfg, const IndexList* subset) {
    SweepStats stats;
    const double alpha = cfg.effective_alpha();
    const double damping = cfg.effective_damping(lik);
    IndexList all;
    if (!subset) {
        all.resize(sites.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
        subset = &all;
    }
    const IndexList& order = *subset;
    auto change = [](const SiteFactor& a, const SiteFactor& b) {
        return std::max(std::abs(a.g - b.g), std::abs(a.tau() - b.tau()));
    };

    if (!cfg.parallel_updates) {
        for (Index n : order) {
            try {
                const CavityState cav = delete_site(sys, state, sites[n], alpha);
                const TiltedMoments tm = lik.tilted(cav.m_cav, cav.v_cav, y(n), alpha);
                if (!std::isfinite(tm.d1) || !std::isfinite(tm.d2))
                    throw NumericalError("non-finite tilted moments");
                const SiteFactor nw = update_site(sites[n], cav, tm, alpha, damping);
                state = include_site(sys, cav, sites[n], nw, alpha);
                stats.max_change = std::max(stats.max_change, change(sites[n], nw));
                sites[n] = nw;
                ++stats.updated;
            } catch (const CavityError&) {
                ++stats.rejected;
            } catch (const SiteError&) {
                ++stats.rejected;
            } catch (const NumericalError&) {
                ++stats.rejected;
            }
        }
        return stats;
    }

    const Index K = static_cast<Index>(order.size());
    std::vector<SiteFactor> proposals(K);
    std::vector<char> ok(K, 0);
#pragma omp parallel for schedule(static) if (K > 64)
    for (Index i = 0; i < K; ++i) {
        const Index n = order[i];
        try {
            const CavityState cav = delete_site(sys, state, sites[n], alpha);
            const TiltedMoments tm = lik.tilted(cav.m_cav, cav.v_cav, y(n), alpha);
            if (!std::isfinite(tm.d1) || !std::isfinite(tm.d2)) continue;
            proposals[i] = update_site(sites[n], cav, tm, alpha, damping);
            ok[i] = 1;
        } catch (const std::exception&) {
        }
    }
    const std::vector<SiteFactor> previous = sites;
    double max_change = 0.0;
    for (Index i = 0; i < K; ++i) {
        if (!ok[i]) {
            ++stats.rejected;
            continue;
        }
        const Index n = order[i];
        max_change = std::max(max_change, change(sites[n], proposals[i]));
        sites[n] = proposals[i];
        ++stats.updated;
    }
    try {
        state = posterior_from_sites(sys, sites);
        stats.max_change = max_change;
    } catch (const NumericalError&) {
        sites = previous;
        stats.rejected += stats.updated;
        stats.updated = 0;
    }
    return stats;
}

double pep_energy(const LowRankSystem& sys, const std::vector<SiteFactor>& sites, double alpha,
                  const std::vector<std::optional<double>>& log_z) {
    if (log_z.size() != sites.size()) throw StateError("one log normaliser per site is required");
    Vector tau, h;
    site_natural(sites, tau, h);
    const Index M = sys.M();
    Matrix A = Matrix::Identity(M, M);
    A.noalias() += sys.Phi * tau.asDiagonal() * sys.Phi.transpose();
    const Whitened wh = whiten(sys.Phi, A, sys.Phi * h);
    double F = -0.5 * wh.logdet_A + 0.5 * wh.c.squaredNorm();
    for (std::size_t n = 0; n < sites.size(); ++n) {
        const SiteFactor& site = sites[n];
        if (site.flat()) {
            if (log_z[n]) F += *log_z[n] / alpha;
            continue;
        }
        if (!log_z[n]) throw StateError("missing log normaliser for site " + std::to_string(n));
        const auto psi = wh.Psi.col(static_cast<Index>(n));
        const double mu = psi.dot(wh.c);
        const double s = psi.squaredNorm();
        double c = 0.0;
        const double gdiff = log_gauss_ratio_scalar(site.tau(), site.g, mu, s, alpha, c);
        F += (*log_z[n] + gdiff) / alpha;
    }
    return F;
}

CavityMarginals cavity_marginals(const LowRankSystem& sys, const std::vector<SiteFactor>& sites,
                                 double alpha) {
    Vector tau, h;
    site_natural(sites, tau, h);
    const Index M = sys.M(), N = sys.N();
    Matrix A = Matrix::Identity(M, M);
    A.noalias() += sys.Phi * tau.asDiagonal() * sys.Phi.transpose();
    const Whitened wh = whiten(sys.Phi, A, sys.Phi * h);
    CavityMarginals out{Vector(N), Vector(N)};
    for (Index n = 0; n < N; ++n) {
        const auto psi = wh.Psi.col(n);
        const double mu = psi.dot(wh.c);
        const double s = psi.squaredNorm();
        const double P = alpha * tau(n);
        const double c = 1.0 - P * s;
        if (!(c > 0.0)) throw CavityError("cavity variance is not positive at datum " + std::to_string(n));
        out.m(n) = mu + P * s * (mu - sites[n].g) / c;
        if (sites[n].flat()) out.m(n) = mu;
        out.v(n) = sys.diag_D(n) + s / c;
    }
    return out;
}

double pep_energy(const LowRankSystem& sys, const std::vector<SiteFactor>& sites, const Vector& y,
                  const Likelihood& lik, double alpha) {
    const CavityMarginals cm = cavity_marginals(sys, sites, alpha);
    std::vector<std::optional<double>> log_z(sites.size());
    for (Index n = 0; n < sys.N(); ++n) log_z[n] = lik.tilted(cm.m(n), cm.v(n), y(n), alpha).log_z;
    return pep_energy(sys, sites, alpha, log_z);
}

double pep_energy_blocks(const LowRankSystem& sys, const std::vector<BlockSite>& sites,
                         const std::vector<double>& alphas, const Vector& y, double sigma2_y) {
    if (alphas.size() != sites.size()) throw ArgumentError("one power per block is required");
    if (!(sigma2_y > 0.0)) throw ArgumentError("noise variance must be positive");
    const Index M = sys.M();
    Matrix A = Matrix::Identity(M, M);
    Vector b = Vector::Zero(M);
    std::vector<Matrix> T(sites.size());
    std::vector<Matrix> Pb(sites.size());
    for (std::size_t k = 0; k < sites.size(); ++k) {
        const auto& site = sites[k];
        const Index nb = static_cast<Index>(site.idx.size());
        Pb[k].resize(M, nb);
        for (Index i = 0; i < nb; ++i) Pb[k].col(i) = sys.Phi.col(site.idx[i]);
        Eigen::LLT<Matrix> cv(site.V);
        if (cv.info() != Eigen::Success) throw StateError("block site covariance is not positive definite");
        T[k] = cv.solve(Matrix::Identity(nb, nb));
        A.noalias() += Pb[k] * T[k] * Pb[k].transpose();
        b.noalias() += Pb[k] * (T[k] * site.g);
    }
    A = 0.5 * (A + A.transpose()).eval();
    const Whitened wh = whiten(sys.Phi, A, b);
    double F = -0.5 * wh.logdet_A + 0.5 * wh.c.squaredNorm();

    for (std::size_t k = 0; k < sites.size(); ++k) {
        const auto& site = sites[k];
        const double alpha = alphas[k];
        const Index nb = static_cast<Index>(site.idx.size());
        const Matrix Psi = wh.chol_A.matrixL().solve(Pb[k]);
        const Matrix S = Psi.transpose() * Psi;
        const Vector mu = Psi.transpose() * wh.c;
        const Matrix P = alpha * T[k];
        const Matrix C = Matrix::Identity(nb, nb) - P * S;
        Eigen::PartialPivLU<Matrix> lu(C);
        const double detC = lu.determinant();
        if (!(detC > 0.0)) throw CavityError("cavity covariance is not positive definite");
        const Vector e = mu - S * (P * site.g);
        const Vector CinvPe = lu.solve(P * e);
        const double gdiff = -0.5 * std::log(detC) +
                             0.5 * (-2.0 * site.g.dot(P * mu) + site.g.dot(P * S * P * site.g) + e.dot(CinvPe));

        const Vector m_f = e + S * CinvPe;
        Matrix cov = sys.residual_block(site.idx) + S + S * lu.solve(P * S);
        cov = 0.5 * (cov + cov.transpose()).eval();
        cov.diagonal().array() += sigma2_y / alpha;
        Eigen::LLT<Matrix> cc(cov);
        if (cc.info() != Eigen::Success) throw CavityError("cavity covariance is not positive definite");
        Vector r(nb);
        for (Index i = 0; i < nb; ++i) r(i) = y(site.idx[i]) - m_f(i);
        const Matrix Lc = cc.matrixL();
        const double logdet = 2.0 * Lc.diagonal().array().log().sum();
        const Vector z = cc.matrixL().solve(r);
        const double log_n = -0.5 * nb * kLog2Pi - 0.5 * logdet - 0.5 * z.squaredNorm();
        const double nd = static_cast<double>(nb);
        const double log_z = -0.5 * alpha * nd * std::log(2.0 * std::numbers::pi * sigma2_y) +
                             0.5 * nd * std::log(2.0 * std::numbers::pi * sigma2_y / alpha) + log_n;
        F += (log_z + gdiff) / alpha;
    }
    return F;
}

PEPResult run_pep(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h,
                  const Likelihood& lik, const PEPConfig& cfg, bool record_energy) {
    cfg.validate();
    if (X.rows() != y.size()) throw ArgumentError("X and y have different lengths");
    const LowRankSystem sys = LowRankSystem::build(X, Z, h);
    const double alpha = cfg.effective_alpha();
    InitialState init = init_state(sys.M(), sys.N());
    PEPResult res;
    res.state = std::move(init.state);
    res.sites = std::move(init.sites);
    for (int it = 0; it < cfg.max_sweeps; ++it) {
        const SweepStats st = sweep(sys, res.state, res.sites, y, lik, cfg);
        ++res.sweeps;
        res.rejected += st.rejected;
        try {
            res.state = posterior_from_sites(sys, res.sites);
        } catch (const NumericalError&) {
        }
        res.change_trace.push_back(st.max_change);
        if (record_energy) res.energy_trace.push_back(pep_energy(sys, res.sites, y, lik, alpha));
        if (st.max_change < cfg.tol) {
            res.converged = true;
            break;
        }
    }
    if (sys.N() == 0) res.converged = true;
    res.energy = pep_energy(sys, res.sites, y, lik, alpha);
    return res;
}

PEPResult run_pep_blocks(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h,
                         const BlockPartition& partition) {
    if (partition.vfe) throw ArgumentError("the zero-power limit has no site representation");
    if (X.rows() != y.size()) throw ArgumentError("X and y have different lengths");
    const LowRankSystem sys = LowRankSystem::build(X, Z, h);
    partition.validate(sys.N(), sys.M());
    const double s2 = h.noise_var();
    PEPResult res;
    for (std::size_t b = 0; b < partition.size(); ++b) {
        BlockSite site;
        site.idx = partition.blocks[b];
        const Index nb = static_cast<Index>(site.idx.size());
        site.g.resize(nb);
        for (Index i = 0; i < nb; ++i) site.g(i) = y(site.idx[i]);
        site.V = partition.alphas[b] * sys.residual_block(site.idx);
        site.V.diagonal().array() += s2;
        res.block_sites.push_back(std::move(site));
    }
    if (partition.all_singletons()) {
        res.sites.resize(sys.N());
        for (const auto& site : res.block_sites) {
            SiteFactor f;
            f.index = site.idx[0];
            f.g = site.g(0);
            f.v = site.V(0, 0);
            res.sites[f.index] = f;
        }
    }
    res.state = posterior_from_block_sites(sys, res.block_sites);
    res.energy = pep_energy_blocks(sys, res.block_sites, partition.alphas, y, s2);
    res.converged = true;
    res.sweeps = 1;
    return res;
}

Prediction predict(const Matrix& Z, const KernelHyper& h, const PosteriorState& state, const Matrix& Xstar,
                   bool classification) {
    if (Xstar.cols() != Z.cols()) throw ArgumentError("test inputs have the wrong dimension");
    const Matrix Ksu = gram(Xstar, Z, h);
    Prediction p;
    p.mean = Ksu * state.gamma;
    const Matrix KB = Ksu * state.beta;
    p.var = (h.signal_var() - (KB.array() * Ksu.array()).rowwise().sum()).matrix();
    p.var = p.var.cwiseMax(0.0);
    if (classification) {
        p.prob.resize(p.mean.size());
        for (Index i = 0; i < p.mean.size(); ++i)
            p.prob(i) = normal_cdf(p.mean(i) / std::sqrt(1.0 + p.var(i)));
    }
    return p;
}

}  // namespace pep
