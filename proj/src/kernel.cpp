#include "pep/kernel.hpp"

#include <omp.h>

namespace pep {

KernelHyper KernelHyper::isotropic(int dim, double lengthscale, double signal_var,
                                   double noise_var) {
    return KernelHyper(Vector::Constant(dim, std::log(lengthscale)), std::log(signal_var),
                       std::log(noise_var));
}

void KernelHyper::validate(int expected_dim) const {
    if (dim() != expected_dim)
        throw ArgumentError("kernel dimension " + std::to_string(dim()) +
                            " does not match input dimension " + std::to_string(expected_dim));
    auto ok = [](double v) { return std::isfinite(v) && std::isfinite(std::exp(v)) && std::exp(v) > 0; };
    for (int d = 0; d < dim(); ++d)
        if (!ok(log_lengthscales(d))) throw ArgumentError("non-finite lengthscale");
    if (!ok(log_signal_var)) throw ArgumentError("non-finite signal variance");
    if (!ok(log_noise_var)) throw ArgumentError("non-finite noise variance");
}

namespace {

void check_inputs(const Matrix& X1, const Matrix& X2, const KernelHyper& h) {
    if (X1.cols() != h.dim() || X2.cols() != h.dim())
        throw ArgumentError("input column count does not match kernel dimension");
    if (!X1.allFinite() || !X2.allFinite()) throw ArgumentError("non-finite kernel input");
}

Matrix scale_rows(const Matrix& X, const KernelHyper& h) {
    Vector inv = (-h.log_lengthscales.array()).exp();
    return X * inv.asDiagonal();
}

}  // namespace

double se_ard(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& x2,
              const KernelHyper& h) {
    if (x.size() != h.dim() || x2.size() != h.dim())
        throw ArgumentError("se_ard: dimension mismatch");
    double r2 = 0.0;
    for (int d = 0; d < h.dim(); ++d) {
        const double diff = (x(d) - x2(d)) / h.lengthscale(d);
        r2 += diff * diff;
    }
    return h.signal_var() * std::exp(-0.5 * r2);
}

Matrix gram(const Matrix& X1, const Matrix& X2, const KernelHyper& h) {
    check_inputs(X1, X2, h);
    const Matrix A = scale_rows(X1, h);
    const Matrix B = scale_rows(X2, h);
    const double sf2 = h.signal_var();
    const Eigen::Index n = A.rows(), m = B.rows(), D = A.cols();
    Matrix K(n, m);
#pragma omp parallel for schedule(static) if (n * m > 4096)
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            double r2 = 0.0;
            for (Eigen::Index d = 0; d < D; ++d) {
                const double diff = A(i, d) - B(j, d);
                r2 += diff * diff;
            }
            K(i, j) = sf2 * std::exp(-0.5 * r2);
        }
    }
    return K;
}

Vector gram_diag(const Matrix& X, const KernelHyper& h) {
    if (X.cols() != h.dim()) throw ArgumentError("input column count does not match kernel dimension");
    return Vector::Constant(X.rows(), h.signal_var());
}

namespace serial {

Matrix gram(const Matrix& X1, const Matrix& X2, const KernelHyper& h) {
    check_inputs(X1, X2, h);
    Matrix K(X1.rows(), X2.rows());
    for (Eigen::Index i = 0; i < X1.rows(); ++i)
        for (Eigen::Index j = 0; j < X2.rows(); ++j)
            K(i, j) = se_ard(X1.row(i).transpose(), X2.row(j).transpose(), h);
    return K;
}

}  // namespace serial

GramGrads gram_grads(const Matrix& X1, const Matrix& X2, const KernelHyper& h) {
    const Matrix K = gram(X1, X2, h);
    const int D = h.dim();
    GramGrads g;
    g.d_log_signal_var = K;
    g.d_log_lengthscales.assign(D, Matrix(K.rows(), K.cols()));
    g.d_inputs.assign(D, Matrix(K.rows(), K.cols()));
    for (int d = 0; d < D; ++d) {
        const double l2 = std::exp(2.0 * h.log_lengthscales(d));
        for (Eigen::Index i = 0; i < K.rows(); ++i) {
            for (Eigen::Index j = 0; j < K.cols(); ++j) {
                const double diff = X1(i, d) - X2(j, d);
                g.d_log_lengthscales[d](i, j) = K(i, j) * diff * diff / l2;
                g.d_inputs[d](i, j) = -K(i, j) * diff / l2;
            }
        }
    }
    return g;
}

Matrix expand_input_derivative(const GramGrads& g, int i, int d, bool symmetric) {
    const Matrix& R = g.d_inputs.at(d);
    Matrix out = Matrix::Zero(R.rows(), R.cols());
    out.row(i) = R.row(i);
    if (symmetric) {
        out.col(i) += R.row(i).transpose();
        out(i, i) = 0.0;
    }
    return out;
}

void gram_vjp(const Matrix& X1, const Matrix& X2, const Matrix& K, const Matrix& G,
              const KernelHyper& h, Vector& grad_log_ls, double& grad_log_sf2,
              Matrix* grad_X1, bool symmetric) {
    const int D = h.dim();
    const Eigen::Index n = K.rows(), m = K.cols();
    const Matrix GK = G.cwiseProduct(K);
    grad_log_sf2 += GK.sum();
    Vector inv_l2 = (-2.0 * h.log_lengthscales.array()).exp();

    Matrix row_ls(n, D);
    Matrix row_x(n, D);
    const Matrix GKs = symmetric ? Matrix(GK + GK.transpose()) : GK;
#pragma omp parallel for schedule(static) if (n * m > 4096)
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int d = 0; d < D; ++d) {
            double s_ls = 0.0, s_x = 0.0;
            for (Eigen::Index j = 0; j < m; ++j) {
                const double diff = X1(i, d) - X2(j, d);
                s_ls += GK(i, j) * diff * diff;
                s_x -= GKs(i, j) * diff;
            }
            row_ls(i, d) = s_ls * inv_l2(d);
            row_x(i, d) = s_x * inv_l2(d);
        }
    }
    grad_log_ls += row_ls.colwise().sum().transpose();
    if (grad_X1) *grad_X1 += row_x;
}

}  // namespace pep
