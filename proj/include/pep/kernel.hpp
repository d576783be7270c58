#pragma once

#include "pep/common.hpp"

#include <cmath>

namespace pep {

// ARD squared-exponential hyper-parameters, all in log space.
struct KernelHyper {
    Vector log_lengthscales;
    double log_signal_var = 0.0;
    double log_noise_var = std::log(0.1);

    KernelHyper() = default;
    KernelHyper(Vector log_ls, double log_sf2, double log_sn2)
        : log_lengthscales(std::move(log_ls)), log_signal_var(log_sf2), log_noise_var(log_sn2) {}

    static KernelHyper isotropic(int dim, double lengthscale, double signal_var, double noise_var);

    int dim() const { return static_cast<int>(log_lengthscales.size()); }
    double lengthscale(int d) const { return std::exp(log_lengthscales(d)); }
    double signal_var() const { return std::exp(log_signal_var); }
    double noise_var() const { return std::exp(log_noise_var); }

    // Throws ArgumentError when a field is non-finite or the dimension differs.
    void validate(int expected_dim) const;
};

double se_ard(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& x2,
              const KernelHyper& h);

Matrix gram(const Matrix& X1, const Matrix& X2, const KernelHyper& h);
Vector gram_diag(const Matrix& X, const KernelHyper& h);

namespace serial {
Matrix gram(const Matrix& X1, const Matrix& X2, const KernelHyper& h);
}

// Derivatives of gram(X1, X2) with respect to each log-hyper and to the rows of X1.
// d_inputs[d](i, j) is dK(i, j)/dX1(i, d); for the symmetric case X1 = X2 the full
// derivative wrt X1(i, d) also touches column i, see expand_input_derivative.
struct GramGrads {
    std::vector<Matrix> d_log_lengthscales;
    Matrix d_log_signal_var;
    std::vector<Matrix> d_inputs;
};

GramGrads gram_grads(const Matrix& X1, const Matrix& X2, const KernelHyper& h);

// Full derivative of K = gram(X1, X2) wrt X1(i, d). When symmetric is true,
// X2 is the same point set as X1 and the transpose contribution is included.
Matrix expand_input_derivative(const GramGrads& g, int i, int d, bool symmetric);

// Vector-Jacobian product: given an adjoint G (same shape as K = gram(X1, X2)),
// accumulates sum_ij G_ij dK_ij/dtheta into grad_log_ls and grad_log_sf2, and
// sum_ij G_ij dK_ij/dX1(k, d) into grad_X1 (if non-null). With symmetric set,
// X2 is X1 and the input gradient includes the column dependence.
void gram_vjp(const Matrix& X1, const Matrix& X2, const Matrix& K, const Matrix& G,
              const KernelHyper& h, Vector& grad_log_ls, double& grad_log_sf2,
              Matrix* grad_X1, bool symmetric = false);

}  // namespace pep
