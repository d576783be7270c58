#pragma once

#include "pep/pep.hpp"

namespace pep {

// Analytic q(u) for Gaussian regression with Kbar = Q + blkdiag(alpha_b D_b) + s2 I.
// A VFE partition uses Kbar = Q + s2 I.
PosteriorState collapsed_posterior(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h,
                                   const BlockPartition& partition);
PosteriorState collapsed_posterior(const LowRankSystem& sys, const Vector& y, const BlockPartition& partition);

// Collapsed PEP log-marginal approximation; a VFE partition dispatches to vfe_energy.
double pep_regression_energy(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h,
                             const BlockPartition& partition);
double vfe_energy(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h);

double exact_gp_logml(const Matrix& X, const Vector& y, const KernelHyper& h);

struct GPPrediction {
    Vector mean;
    Vector var;  // latent variance, without observation noise
};
GPPrediction exact_gp_predict(const Matrix& X, const Vector& y, const KernelHyper& h, const Matrix& Xstar);

// Collapsed energy together with its gradient wrt every log-hyper and the pseudo-inputs.
struct EnergyGrad {
    double energy = 0.0;
    Vector d_log_lengthscales;
    double d_log_signal_var = 0.0;
    double d_log_noise_var = 0.0;
    Matrix d_Z;
};
EnergyGrad regression_energy_grad(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h,
                                  const BlockPartition& partition);

// Exact regression on M surrogate observations y ~ N(W u, Sigma) that reproduces a
// given q(u) and log-marginal. Sigma is a multiple of the identity.
struct SurrogateModel {
    Vector y_tilde;
    Matrix W_tilde;
    Matrix Sigma_tilde;
};
SurrogateModel surrogate_recover(const PosteriorState& state, double energy, const Matrix& Kuu);

// Z (1 - log Z + F): the unnormalised-KL objective with the free energy F collapsed in.
double unnormalised_kl_bound(double log_z, double free_energy);

}  // namespace pep
