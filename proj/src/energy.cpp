#include "pep/energy.hpp"

#include <cmath>
#include <optional>

namespace pep {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double block_coef(double alpha) { return (1.0 - alpha) / (2.0 * alpha); }

// Kbar = Phi^T Phi + Lambda, with Lambda = blkdiag(alpha_b D_b) + s2 I (or s2 I for VFE).
struct Collapsed {
    std::optional<LowRankBlockSolver> solver;
    bool diagonal = true;
    Vector lambda;                     // diagonal case
    std::vector<Matrix> lambda_blocks;  // block case
    Vector alpha_of;                   // per-datum power, diagonal case
    double correction = 0.0;           // sum_b c_b log|I + alpha_b D_b / s2|, or tr(D)/(2 s2) for VFE
};

Collapsed factor(const LowRankSystem& sys, const BlockPartition& part, double s2) {
    if (!(s2 > 0.0) || !std::isfinite(s2)) throw ArgumentError("noise variance must be positive");
    const Index N = sys.N();
    part.validate(N, sys.M());
    Collapsed c;
    if (part.vfe) {
        c.lambda = Vector::Constant(N, s2);
        c.solver.emplace(sys.Phi, c.lambda);
        c.correction = sys.diag_D.sum() / (2.0 * s2);
        return c;
    }
    if (part.all_singletons()) {
        c.lambda.resize(N);
        c.alpha_of.resize(N);
        for (std::size_t b = 0; b < part.size(); ++b) {
            const Index n = part.blocks[b][0];
            const double a = part.alphas[b];
            c.alpha_of(n) = a;
            c.lambda(n) = a * sys.diag_D(n) + s2;
            c.correction += block_coef(a) * std::log1p(a * sys.diag_D(n) / s2);
        }
        c.solver.emplace(sys.Phi, c.lambda);
        return c;
    }
    c.diagonal = false;
    for (std::size_t b = 0; b < part.size(); ++b) {
        const double a = part.alphas[b];
        Matrix L = a * sys.residual_block(part.blocks[b]);
        L.diagonal().array() += s2;
        Matrix I_plus = L / s2;
        Eigen::LLT<Matrix> llt(I_plus);
        if (llt.info() != Eigen::Success) throw NumericalError("block residual is not positive definite");
        const Matrix Lc = llt.matrixL();
        c.correction += block_coef(a) * 2.0 * Lc.diagonal().array().log().sum();
        c.lambda_blocks.push_back(std::move(L));
    }
    c.solver.emplace(sys.Phi, part.blocks, c.lambda_blocks);
    return c;
}

double energy_from(const Collapsed& c, const Vector& y, const Vector& a) {
    const double N = static_cast<double>(y.size());
    return -0.5 * N * kLog2Pi - 0.5 * c.solver->logdet() - 0.5 * y.dot(a) - c.correction;
}

Matrix lower_solve_T(const CholeskyFactor& chol, const Matrix& B) {
    return chol.L.transpose().triangularView<Eigen::Upper>().solve(B);
}

}  // namespace

PosteriorState collapsed_posterior(const LowRankSystem& sys, const Vector& y, const BlockPartition& partition) {
    if (y.size() != sys.N()) throw ArgumentError("y has the wrong length");
    const Collapsed c = factor(sys, partition, sys.h.noise_var());
    const Matrix& C = c.solver->B_inv_PhiLinv();
    PosteriorState s;
    s.gamma = lower_solve_T(sys.chol_Kuu, C * y);
    Matrix E = C * sys.Phi.transpose();  // I - B^{-1}
    E = 0.5 * (E + E.transpose()).eval();
    const Matrix Y = lower_solve_T(sys.chol_Kuu, E);
    s.beta = lower_solve_T(sys.chol_Kuu, Y.transpose());
    s.beta = 0.5 * (s.beta + s.beta.transpose()).eval();
    return s;
}

PosteriorState collapsed_posterior(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h,
                                   const BlockPartition& partition) {
    return collapsed_posterior(LowRankSystem::build(X, Z, h), y, partition);
}

double pep_regression_energy(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h,
                             const BlockPartition& partition) {
    if (X.rows() != y.size()) throw ArgumentError("X and y have different lengths");
    const LowRankSystem sys = LowRankSystem::build(X, Z, h);
    const Collapsed c = factor(sys, partition, h.noise_var());
    return energy_from(c, y, c.solver->solve(y));
}

double vfe_energy(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h) {
    return pep_regression_energy(X, y, Z, h, BlockPartition::vfe_limit(X.rows()));
}

double exact_gp_logml(const Matrix& X, const Vector& y, const KernelHyper& h) {
    if (X.rows() != y.size()) throw ArgumentError("X and y have different lengths");
    h.validate(static_cast<int>(X.cols()));
    Matrix K = gram(X, X, h);
    K.diagonal().array() += h.noise_var();
    const CholeskyFactor ch = chol_psd(K);
    const Vector a = ch.solve(y);
    return -0.5 * static_cast<double>(y.size()) * kLog2Pi - 0.5 * ch.logdet() - 0.5 * y.dot(a);
}

GPPrediction exact_gp_predict(const Matrix& X, const Vector& y, const KernelHyper& h, const Matrix& Xstar) {
    if (X.rows() != y.size()) throw ArgumentError("X and y have different lengths");
    h.validate(static_cast<int>(X.cols()));
    Matrix K = gram(X, X, h);
    K.diagonal().array() += h.noise_var();
    const CholeskyFactor ch = chol_psd(K);
    const Matrix Kxs = gram(X, Xstar, h);
    GPPrediction p;
    p.mean = Kxs.transpose() * ch.solve(y);
    const Matrix V = ch.L.triangularView<Eigen::Lower>().solve(Kxs);
    p.var = (gram_diag(Xstar, h) - V.colwise().squaredNorm().transpose()).cwiseMax(0.0);
    return p;
}

EnergyGrad regression_energy_grad(const Matrix& X, const Vector& y, const Matrix& Z, const KernelHyper& h,
                                  const BlockPartition& partition) {
    if (X.rows() != y.size()) throw ArgumentError("X and y have different lengths");
    const LowRankSystem sys = LowRankSystem::build(X, Z, h);
    const double s2 = h.noise_var();
    const Collapsed c = factor(sys, partition, s2);
    const LowRankBlockSolver& solver = *c.solver;
    const Index N = sys.N(), M = sys.M();

    EnergyGrad out;
    const Vector a = solver.solve(y);
    out.energy = energy_from(c, y, a);

    // W Kbar^{-1} = Lu^{-T} B^{-1} Phi Lambda^{-1}
    const Matrix WKinv = lower_solve_T(sys.chol_Kuu, solver.B_inv_PhiLinv());
    const Vector Wa = sys.W * a;
    Matrix WH = 0.5 * (Wa * a.transpose() - WKinv);  // W G'
    const Vector kinv_diag = solver.inverse_diag();
    double d_s2 = 0.5 * (a.squaredNorm() - kinv_diag.sum());

    Vector J_diag;            // diagonal-site cases
    std::vector<Matrix> J_blocks;
    if (partition.vfe) {
        J_diag = Vector::Constant(N, -0.5 / s2);
        d_s2 += sys.diag_D.sum() / (2.0 * s2 * s2);
    } else if (c.diagonal) {
        J_diag.resize(N);
        for (Index n = 0; n < N; ++n) {
            const double al = c.alpha_of(n);
            const double cb = block_coef(al);
            const double g = 0.5 * (a(n) * a(n) - kinv_diag(n));
            J_diag(n) = al * g - cb * al / c.lambda(n);
            d_s2 += -cb / c.lambda(n) + cb / s2;
        }
    } else {
        for (std::size_t b = 0; b < partition.size(); ++b) {
            const IndexList& idx = partition.blocks[b];
            const Index nb = static_cast<Index>(idx.size());
            const double al = partition.alphas[b];
            const double cb = block_coef(al);
            Vector ab(nb);
            for (Index i = 0; i < nb; ++i) ab(i) = a(idx[i]);
            const Matrix Gbb = 0.5 * (ab * ab.transpose() - solver.inverse_block(b));
            const Matrix Sinv = c.lambda_blocks[b].llt().solve(Matrix::Identity(nb, nb));
            Matrix J = al * Gbb - cb * al * Sinv;
            J = 0.5 * (J + J.transpose()).eval();
            d_s2 += -cb * Sinv.trace() + cb * static_cast<double>(nb) / s2;
            J_blocks.push_back(std::move(J));
        }
    }

    // WH = W G' - W blkdiag(J)
    if (!J_blocks.empty()) {
        for (std::size_t b = 0; b < partition.size(); ++b) {
            const IndexList& idx = partition.blocks[b];
            const Index nb = static_cast<Index>(idx.size());
            Matrix Wb(M, nb);
            for (Index i = 0; i < nb; ++i) Wb.col(i) = sys.W.col(idx[i]);
            const Matrix WJ = Wb * J_blocks[b];
            for (Index i = 0; i < nb; ++i) WH.col(idx[i]) -= WJ.col(i);
        }
    } else {
        WH -= sys.W * J_diag.asDiagonal();
    }

    const Matrix dKuf = 2.0 * WH;
    Matrix dKuu = -WH * sys.W.transpose();
    dKuu = 0.5 * (dKuu + dKuu.transpose()).eval();

    out.d_log_lengthscales = Vector::Zero(h.dim());
    out.d_Z = Matrix::Zero(M, Z.cols());
    double d_sf2 = 0.0;
    if (N > 0) gram_vjp(Z, X, sys.Kuf, dKuf, h, out.d_log_lengthscales, d_sf2, &out.d_Z);
    gram_vjp(Z, Z, sys.Kuu, dKuu, h, out.d_log_lengthscales, d_sf2, &out.d_Z, true);
    if (!J_blocks.empty()) {
        for (std::size_t b = 0; b < partition.size(); ++b) {
            const IndexList& idx = partition.blocks[b];
            Matrix Xb(idx.size(), X.cols());
            for (std::size_t i = 0; i < idx.size(); ++i) Xb.row(i) = X.row(idx[i]);
            const Matrix Kbb = gram(Xb, Xb, h);
            gram_vjp(Xb, Xb, Kbb, J_blocks[b], h, out.d_log_lengthscales, d_sf2, nullptr, true);
        }
    } else {
        d_sf2 += h.signal_var() * J_diag.sum();
    }
    out.d_log_signal_var = d_sf2;
    out.d_log_noise_var = s2 * d_s2;
    return out;
}

SurrogateModel surrogate_recover(const PosteriorState& state, double energy, const Matrix& Kuu) {
    const Index M = Kuu.rows();
    if (state.beta.rows() != M || state.gamma.size() != M) throw ArgumentError("state and K_uu sizes differ");
    if (!std::isfinite(energy)) throw ArgumentError("energy must be finite");
    const Matrix I = Matrix::Identity(M, M);
    // R = V_u^{-1} - K_uu^{-1} = (I - beta K_uu)^{-1} beta, natural mean (I - beta K_uu)^{-1} gamma
    Eigen::PartialPivLU<Matrix> lu(I - state.beta * Kuu);
    Matrix R = lu.solve(state.beta);
    R = 0.5 * (R + R.transpose()).eval();
    const Vector hn = lu.solve(state.gamma);
    const double scale = R.cwiseAbs().maxCoeff();
    Eigen::LLT<Matrix> llt(R);
    if (!(scale > 0.0) || llt.info() != Eigen::Success)
        throw DegeneracyError("posterior precision does not exceed the prior precision");
    const Matrix L = llt.matrixL();
    if (L.diagonal().minCoeff() <= 1e-12 * std::sqrt(scale))
        throw DegeneracyError("posterior precision does not exceed the prior precision");

    // log p(y~) = c0 - (M/2) log s with Sigma = s I; c0 does not depend on s.
    const Vector q = L.triangularView<Eigen::Lower>().solve(hn);
    Matrix C = I + L.transpose() * Kuu * L;
    C = 0.5 * (C + C.transpose()).eval();
    Eigen::LLT<Matrix> cc(C);
    if (cc.info() != Eigen::Success) throw NumericalError("surrogate evidence matrix is not positive definite");
    const Matrix Lc = cc.matrixL();
    const double c0 = -0.5 * static_cast<double>(M) * kLog2Pi - Lc.diagonal().array().log().sum() -
                      0.5 * q.dot(cc.solve(q));
    const double log_s = 2.0 * (c0 - energy) / static_cast<double>(M);
    const double s = std::exp(log_s);
    if (!(s > 0.0) || !std::isfinite(s)) throw DegeneracyError("surrogate noise is not representable");

    SurrogateModel out;
    out.Sigma_tilde = s * I;
    out.W_tilde = std::sqrt(s) * L.transpose();
    out.y_tilde = std::sqrt(s) * q;
    return out;
}

double unnormalised_kl_bound(double log_z, double free_energy) {
    return std::exp(log_z) * (1.0 - log_z + free_energy);
}

}  // namespace pep
