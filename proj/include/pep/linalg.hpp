#pragma once

#include "pep/common.hpp"
#include "pep/kernel.hpp"

#include <vector>

namespace pep {

using IndexList = std::vector<Index>;

const std::vector<double>& default_jitter_ladder();

struct CholeskyFactor {
    Matrix L;
    double jitter = 0.0;
    std::vector<double> attempted;

    Vector solve(const Vector& b) const;
    Matrix solve(const Matrix& B) const;
    double logdet() const;
};

// Cholesky with escalating diagonal jitter (ladder entries scale mean(diag A)).
CholeskyFactor chol_psd(const Matrix& A, const std::vector<double>& ladder = default_jitter_ladder());

// K_uu, K_uf and the residuals D = K_ff - Q_ff for one (X, Z, h) configuration.
struct LowRankSystem {
    Matrix X;
    Matrix Z;
    KernelHyper h;
    Matrix Kuu;
    Matrix Kuf;
    Vector Kff_diag;
    Vector diag_D;      // clamped at 0 from below
    Vector diag_D_raw;  // before clamping
    CholeskyFactor chol_Kuu;
    Matrix Phi;  // L_uu^{-1} K_uf
    Matrix W;    // K_uu^{-1} K_uf

    static LowRankSystem build(const Matrix& X, const Matrix& Z, const KernelHyper& h);

    Index M() const { return Kuu.rows(); }
    Index N() const { return Kuf.cols(); }
    // Dense residual block K_bb - Q_bb for the listed data indices.
    Matrix residual_block(const IndexList& idx) const;
};

// Factorisation of Kbar = Phi^T Phi + blkdiag(Lambda_b), where Phi is M x N and the
// blocks Lambda_b are positive definite. All operations are O(N M^2 + sum n_b^3).
class LowRankBlockSolver {
public:
    LowRankBlockSolver(const Matrix& Phi, const Vector& lambda_diag);
    LowRankBlockSolver(const Matrix& Phi, std::vector<IndexList> blocks,
                       const std::vector<Matrix>& lambda_blocks);

    Vector solve(const Vector& r) const;
    double logdet() const { return logdet_lambda_ + logdet_B_; }
    double logdet_lambda() const { return logdet_lambda_; }

    // Lambda^{-1} applied to the columns of R^T (R is k x N); returns k x N.
    Matrix lambda_solve_rows(const Matrix& R) const;
    Vector lambda_solve(const Vector& r) const;
    // B^{-1} Phi Lambda^{-1} (M x N).
    const Matrix& B_inv_PhiLinv() const { return BinvPhiLinv_; }
    const Matrix& PhiLinv() const { return PhiLinv_; }
    // Block b of Kbar^{-1}.
    Matrix inverse_block(std::size_t b) const;
    Vector inverse_diag() const;

    const std::vector<IndexList>& blocks() const { return blocks_; }
    bool diagonal() const { return diagonal_; }

private:
    void factor_B();

    Matrix Phi_;
    bool diagonal_ = false;
    Vector lambda_diag_;
    std::vector<IndexList> blocks_;
    std::vector<Eigen::LLT<Matrix>> lambda_chol_;
    Matrix PhiLinv_;
    Eigen::LLT<Matrix> B_chol_;
    Matrix BinvPhiLinv_;
    double logdet_lambda_ = 0.0;
    double logdet_B_ = 0.0;
};

struct SolveLogdet {
    Vector solve;
    double logdet;
};

// Kbar = Q_ff + diag(alpha_scaled_diag) + noise * I applied to rhs, with log|Kbar|.
SolveLogdet low_rank_solve_logdet(const LowRankSystem& sys, const Vector& alpha_scaled_diag,
                                  double noise, const Vector& rhs);

}  // namespace pep
