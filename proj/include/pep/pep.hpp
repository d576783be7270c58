#pragma once

#include "pep/likelihoods.hpp"
#include "pep/linalg.hpp"
#include "pep/partition.hpp"

#include <limits>
#include <optional>

namespace pep {

constexpr double kMinAlpha = 1e-6;

// Rank-1 site N(w_n^T u; g, v) over the pseudo-points; v = +inf is a flat site.
struct SiteFactor {
    double g = 0.0;
    double v = std::numeric_limits<double>::infinity();
    Index index = 0;

    bool flat() const { return std::isinf(v); }
    double tau() const { return flat() ? 0.0 : 1.0 / v; }
    double nat_mean() const { return flat() ? 0.0 : g / v; }
    static SiteFactor from_natural(double tau, double h, Index index);
};

// Site over a block of data, N(W_b^T u; g_b, V_b).
struct BlockSite {
    IndexList idx;
    Vector g;
    Matrix V;
};

// q(u) with mean K_uu gamma and covariance K_uu - K_uu beta K_uu.
struct PosteriorState {
    Vector gamma;
    Matrix beta;

    Vector mean_u(const Matrix& Kuu) const { return Kuu * gamma; }
    Matrix cov_u(const Matrix& Kuu) const { return Kuu - Kuu * beta * Kuu; }
};

struct CavityState {
    Vector gamma_cav;
    Matrix beta_cav;
    double m_cav = 0.0;  // cavity marginal of f_n
    double v_cav = 0.0;
    double s_cav = 0.0;  // cavity variance of w_n^T u
    Index index = 0;
};

struct PEPConfig {
    double alpha = 1.0;
    std::vector<double> alpha_per_block;
    double damping = 0.0;  // 0 selects the default for the likelihood
    double tol = 1e-6;
    int max_sweeps = 100;
    bool parallel_updates = false;
    int minibatch_size = 0;

    void validate() const;
    double effective_alpha() const;
    double effective_damping(const Likelihood& lik) const;
};

struct InitialState {
    PosteriorState state;
    std::vector<SiteFactor> sites;
};

InitialState init_state(Index M, Index N);

CavityState delete_site(const LowRankSystem& sys, const PosteriorState& state, const SiteFactor& site,
                        double alpha);
PosteriorState project(const LowRankSystem& sys, const CavityState& cavity, const TiltedMoments& tm);
SiteFactor update_site(const SiteFactor& old, const CavityState& cavity, const TiltedMoments& tm,
                       double alpha, double damping);
// Posterior after replacing `old` by `updated`, starting from the cavity that removed
// an alpha-fraction of `old`.
PosteriorState include_site(const LowRankSystem& sys, const CavityState& cavity, const SiteFactor& old,
                            const SiteFactor& updated, double alpha);

// Stable recomputation of (gamma, beta) from the site parameters.
PosteriorState posterior_from_sites(const LowRankSystem& sys, const std::vector<SiteFactor>& sites);
PosteriorState posterior_from_block_sites(const LowRankSystem& sys, const std::vector<BlockSite>& sites);

struct SweepStats {
    double max_change = 0.0;
    int updated = 0;
    int rejected = 0;
};

SweepStats sweep(const LowRankSystem& sys, PosteriorState& state, std::vector<SiteFactor>& sites,
                 const Vector& y, const Likelihood& lik, const PEPConfig& cfg,
                 const IndexList* subset = nullptr);

// Energy as G(q) - G(p) + sum_n (1/alpha)[log Z_n + G(q_cav,n) - G(q)].
// A missing log Z is only allowed for flat sites, which then contribute nothing.
double pep_energy(const LowRankSystem& sys, const std::vector<SiteFactor>& sites, double alpha,
                  const std::vector<std::optional<double>>& log_z);
// Same, with the tilted normalisers evaluated at the current cavities.
double pep_energy(const LowRankSystem& sys, const std::vector<SiteFactor>& sites, const Vector& y,
                  const Likelihood& lik, double alpha);
double pep_energy_blocks(const LowRankSystem& sys, const std::vector<BlockSite>& sites,
                         const std::vector<double>& alphas, const Vector& y, double sigma2_y);

// Cavity marginals (of f_n) implied by the sites, for every datum.
struct CavityMarginals {
    Vector m;
    Vector v;
};
CavityMarginals cavity_marginals(const LowRankSystem& sys, const std::vector<SiteFactor>& sites,
                                 double alpha);

struct PEPResult {
    PosteriorState state;
    std::vector<SiteFactor> sites;
    std::vector<BlockSite> block_sites;
    double energy = 0.0;
    bool converged = false;
    int sweeps = 0;
    int rejected = 0;
    std::vector<double> change_trace;
    std::vector<double> energy_trace;
};

// Block sites are only supported for the Gaussian likelihood, where they are assigned
// analytically (g_b = y_b, V_b = alpha_b D_b + s2 I).
PEPResult run_pep(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h,
                  const Likelihood& lik, const PEPConfig& cfg, bool record_energy = false);
PEPResult run_pep_blocks(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h,
                         const BlockPartition& partition);

struct Prediction {
    Vector mean;  // latent mean
    Vector var;   // latent variance
    Vector prob;  // P(y = +1) for classification, empty otherwise
};

Prediction predict(const Matrix& Z, const KernelHyper& h, const PosteriorState& state, const Matrix& Xstar,
                   bool classification = false);

}  // namespace pep
