#include "pep/linalg.hpp"

#include <cmath>
#include <sstream>

namespace pep {

const std::vector<double>& default_jitter_ladder() {
    static const std::vector<double> ladder{0.0, 1e-10, 1e-8, 1e-6, 1e-4};
    return ladder;
}

Vector CholeskyFactor::solve(const Vector& b) const {
    Vector x = L.triangularView<Eigen::Lower>().solve(b);
    return L.transpose().triangularView<Eigen::Upper>().solve(x);
}

Matrix CholeskyFactor::solve(const Matrix& B) const {
    Matrix X = L.triangularView<Eigen::Lower>().solve(B);
    return L.transpose().triangularView<Eigen::Upper>().solve(X);
}

double CholeskyFactor::logdet() const {
    return 2.0 * L.diagonal().array().log().sum();
}

CholeskyFactor chol_psd(const Matrix& A, const std::vector<double>& ladder) {
    if (A.rows() != A.cols()) throw ArgumentError("chol_psd: matrix is not square");
    if (!A.allFinite()) throw ArgumentError("chol_psd: non-finite entries");
    const double scale = A.cwiseAbs().maxCoeff();
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(scale, 1e-300))
        throw ArgumentError("chol_psd: matrix is not symmetric");
    CholeskyFactor out;
    const Index n = A.rows();
    if (n == 0) return out;
    const double mean_diag = A.diagonal().mean();
    for (double level : ladder) {
        const double j = level * mean_diag;
        out.attempted.push_back(j);
        Matrix Aj = A;
        Aj.diagonal().array() += j;
        Eigen::LLT<Matrix> llt(Aj);
        if (llt.info() != Eigen::Success) continue;
        Matrix L = llt.matrixL();
        if (!L.allFinite() || (L.diagonal().array() <= 0.0).any()) continue;
        out.L = std::move(L);
        out.jitter = j;
        return out;
    }
    std::ostringstream msg;
    msg << "chol_psd: Cholesky failed for all jitters {";
    for (std::size_t i = 0; i < out.attempted.size(); ++i)
        msg << (i ? ", " : "") << out.attempted[i];
    msg << "}";
    throw NumericalError(msg.str(), out.attempted);
}

LowRankSystem LowRankSystem::build(const Matrix& X, const Matrix& Z, const KernelHyper& h) {
    if (Z.rows() < 1) throw ArgumentError("at least one pseudo-input is required");
    h.validate(static_cast<int>(Z.cols()));
    if (X.rows() > 0 && X.cols() != Z.cols())
        throw ArgumentError("data and pseudo-inputs have different dimensions");
    LowRankSystem s;
    s.X = X;
    s.Z = Z;
    s.h = h;
    s.Kuu = gram(Z, Z, h);
    s.chol_Kuu = chol_psd(s.Kuu);
    const Index N = X.rows();
    if (N > 0) {
        s.Kuf = gram(Z, X, h);
        s.Kff_diag = gram_diag(X, h);
    } else {
        s.Kuf = Matrix(Z.rows(), 0);
        s.Kff_diag = Vector(0);
    }
    s.Phi = s.chol_Kuu.L.triangularView<Eigen::Lower>().solve(s.Kuf);
    s.W = s.chol_Kuu.L.transpose().triangularView<Eigen::Upper>().solve(s.Phi);
    s.diag_D_raw = s.Kff_diag - s.Phi.colwise().squaredNorm().transpose();
    s.diag_D = s.diag_D_raw.cwiseMax(0.0);
    return s;
}

Matrix LowRankSystem::residual_block(const IndexList& idx) const {
    const Index n = static_cast<Index>(idx.size());
    Matrix Xb(n, X.cols());
    Matrix Pb(Phi.rows(), n);
    for (Index i = 0; i < n; ++i) {
        Xb.row(i) = X.row(idx[i]);
        Pb.col(i) = Phi.col(idx[i]);
    }
    Matrix D = gram(Xb, Xb, h) - Pb.transpose() * Pb;
    D = 0.5 * (D + D.transpose());
    // Match the clamped diagonal used by the scalar path.
    for (Index i = 0; i < n; ++i) D(i, i) = diag_D(idx[i]);
    return D;
}

LowRankBlockSolver::LowRankBlockSolver(const Matrix& Phi, const Vector& lambda_diag)
    : Phi_(Phi), diagonal_(true), lambda_diag_(lambda_diag) {
    if (lambda_diag.size() != Phi.cols()) throw ArgumentError("diagonal length mismatch");
    for (Index i = 0; i < lambda_diag.size(); ++i) {
        if (!(lambda_diag(i) > 0.0) || !std::isfinite(lambda_diag(i)))
            throw NumericalError("non-positive diagonal entry at index " + std::to_string(i));
    }
    logdet_lambda_ = lambda_diag.array().log().sum();
    PhiLinv_ = Phi * lambda_diag.cwiseInverse().asDiagonal();
    factor_B();
}

LowRankBlockSolver::LowRankBlockSolver(const Matrix& Phi, std::vector<IndexList> blocks,
                                       const std::vector<Matrix>& lambda_blocks)
    : Phi_(Phi), diagonal_(false), blocks_(std::move(blocks)) {
    if (blocks_.size() != lambda_blocks.size()) throw ArgumentError("block count mismatch");
    PhiLinv_ = Matrix::Zero(Phi.rows(), Phi.cols());
    lambda_chol_.reserve(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const IndexList& idx = blocks_[b];
        const Index nb = static_cast<Index>(idx.size());
        if (lambda_blocks[b].rows() != nb || lambda_blocks[b].cols() != nb)
            throw ArgumentError("block matrix has wrong size");
        Eigen::LLT<Matrix> llt(lambda_blocks[b]);
        if (llt.info() != Eigen::Success)
            throw NumericalError("block " + std::to_string(b) + " is not positive definite");
        logdet_lambda_ += 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
        Matrix Pb(Phi.rows(), nb);
        for (Index i = 0; i < nb; ++i) Pb.col(i) = Phi.col(idx[i]);
        Matrix PbL = llt.solve(Pb.transpose()).transpose();
        for (Index i = 0; i < nb; ++i) PhiLinv_.col(idx[i]) = PbL.col(i);
        lambda_chol_.push_back(std::move(llt));
    }
    factor_B();
}

void LowRankBlockSolver::factor_B() {
    const Index M = Phi_.rows();
    Matrix B = Matrix::Identity(M, M) + PhiLinv_ * Phi_.transpose();
    B = 0.5 * (B + B.transpose());
    B_chol_.compute(B);
    if (B_chol_.info() != Eigen::Success)
        throw NumericalError("low-rank capacitance matrix is not positive definite");
    logdet_B_ = 2.0 * Matrix(B_chol_.matrixL()).diagonal().array().log().sum();
    BinvPhiLinv_ = B_chol_.solve(PhiLinv_);
}

Vector LowRankBlockSolver::lambda_solve(const Vector& r) const {
    if (diagonal_) return r.cwiseQuotient(lambda_diag_);
    Vector out(r.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const IndexList& idx = blocks_[b];
        Vector rb(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) rb(i) = r(idx[i]);
        Vector sb = lambda_chol_[b].solve(rb);
        for (std::size_t i = 0; i < idx.size(); ++i) out(idx[i]) = sb(i);
    }
    return out;
}

Matrix LowRankBlockSolver::lambda_solve_rows(const Matrix& R) const {
    Matrix out(R.rows(), R.cols());
    for (Index k = 0; k < R.rows(); ++k) out.row(k) = lambda_solve(R.row(k).transpose()).transpose();
    return out;
}

Vector LowRankBlockSolver::solve(const Vector& r) const {
    if (r.size() != Phi_.cols()) throw ArgumentError("rhs length mismatch");
    return lambda_solve(r) - PhiLinv_.transpose() * (BinvPhiLinv_ * r);
}

Matrix LowRankBlockSolver::inverse_block(std::size_t b) const {
    const IndexList& idx = diagonal_ ? IndexList{static_cast<Index>(b)} : blocks_.at(b);
    const Index nb = static_cast<Index>(idx.size());
    Matrix Lb(Phi_.rows(), nb), Cb(Phi_.rows(), nb);
    for (Index i = 0; i < nb; ++i) {
        Lb.col(i) = PhiLinv_.col(idx[i]);
        Cb.col(i) = BinvPhiLinv_.col(idx[i]);
    }
    Matrix inv_lambda;
    if (diagonal_) {
        inv_lambda = Matrix::Constant(1, 1, 1.0 / lambda_diag_(idx[0]));
    } else {
        inv_lambda = lambda_chol_[b].solve(Matrix::Identity(nb, nb));
    }
    return inv_lambda - Lb.transpose() * Cb;
}

Vector LowRankBlockSolver::inverse_diag() const {
    Vector d = PhiLinv_.cwiseProduct(BinvPhiLinv_).colwise().sum().transpose();
    if (diagonal_) return lambda_diag_.cwiseInverse() - d;
    Vector out(Phi_.cols());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const IndexList& idx = blocks_[b];
        const Index nb = static_cast<Index>(idx.size());
        Matrix inv_lambda = lambda_chol_[b].solve(Matrix::Identity(nb, nb));
        for (Index i = 0; i < nb; ++i) out(idx[i]) = inv_lambda(i, i) - d(idx[i]);
    }
    return out;
}

SolveLogdet low_rank_solve_logdet(const LowRankSystem& sys, const Vector& alpha_scaled_diag,
                                  double noise, const Vector& rhs) {
    if (alpha_scaled_diag.size() != sys.N() || rhs.size() != sys.N())
        throw ArgumentError("low_rank_solve_logdet: length mismatch");
    Vector lambda = alpha_scaled_diag.array() + noise;
    LowRankBlockSolver solver(sys.Phi, lambda);
    return {solver.solve(rhs), solver.logdet()};
}

}  // namespace pep
