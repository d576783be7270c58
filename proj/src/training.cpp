#include "pep/training.hpp"

#include <ceres/ceres.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace pep {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

Vector TrainableParams::to_vector() const {
    const int D = h.dim();
    Vector x(size());
    x.head(D) = h.log_lengthscales;
    x(D) = h.log_signal_var;
    x(D + 1) = h.log_noise_var;
    for (Index m = 0; m < Z.rows(); ++m)
        for (int d = 0; d < D; ++d) x(D + 2 + m * D + d) = Z(m, d);
    return x;
}

TrainableParams TrainableParams::from_vector(const Vector& x, int dim, Index M) {
    if (x.size() != dim + 2 + M * dim) throw ArgumentError("parameter vector has the wrong length");
    TrainableParams p;
    p.h.log_lengthscales = x.head(dim);
    p.h.log_signal_var = x(dim);
    p.h.log_noise_var = x(dim + 1);
    p.Z.resize(M, dim);
    for (Index m = 0; m < M; ++m)
        for (int d = 0; d < dim; ++d) p.Z(m, d) = x(dim + 2 + m * dim + d);
    return p;
}

TrainableParams initial_params(const Matrix& X, const Vector& y, Index M, std::uint64_t seed) {
    const Index N = X.rows();
    const int D = static_cast<int>(X.cols());
    if (M < 1 || M > N) throw ArgumentError("need 1 <= M <= N");
    TrainableParams p;
    p.h.log_lengthscales.resize(D);
    for (int d = 0; d < D; ++d) {
        const double mean = X.col(d).mean();
        const double sd = std::sqrt((X.col(d).array() - mean).square().mean());
        p.h.log_lengthscales(d) = std::log(sd > 1e-12 ? sd : 1.0);
    }
    double var = 1.0;
    if (N > 1) var = (y.array() - y.mean()).square().mean();
    if (!(var > 1e-12)) var = 1.0;
    p.h.log_signal_var = std::log(var);
    p.h.log_noise_var = std::log(0.1 * var);
    std::vector<Index> idx(N);
    std::iota(idx.begin(), idx.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    p.Z.resize(M, D);
    for (Index m = 0; m < M; ++m) p.Z.row(m) = X.row(idx[m]);
    return p;
}

namespace {

class CountingFunction : public ceres::FirstOrderFunction {
public:
    CountingFunction(const Objective& f, Index n, int max_evals, OptimResult& res, Clock::time_point t0)
        : f_(f), n_(n), max_evals_(max_evals), res_(res), t0_(t0) {}

    bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
        if (res_.evals >= max_evals_) return false;
        const Vector x = Eigen::Map<const Vector>(parameters, n_);
        ++res_.evals;
        ObjectiveValue out;
        bool ok = true;
        try {
            out = f_(x);
            ok = std::isfinite(out.value) && out.grad.size() == n_ && out.grad.allFinite();
        } catch (const std::exception&) {
            ok = false;
        }
        TraceEntry e;
        e.iteration = res_.evals;
        e.objective = ok ? out.value : kInf;
        if (ok && out.value < res_.value) {
            res_.value = out.value;
            res_.x = x;
        }
        e.best = res_.value;
        e.grad_norm = ok ? out.grad.norm() : kInf;
        e.seconds = seconds_since(t0_);
        res_.trace.push_back(e);
        if (!ok) return false;
        *cost = out.value;
        if (gradient) Eigen::Map<Vector>(gradient, n_) = out.grad;
        return true;
    }
    int NumParameters() const override { return static_cast<int>(n_); }

private:
    const Objective& f_;
    Index n_;
    int max_evals_;
    OptimResult& res_;
    Clock::time_point t0_;
};

class BudgetCallback : public ceres::IterationCallback {
public:
    BudgetCallback(const OptimResult& res, int max_evals) : res_(res), max_evals_(max_evals) {}
    ceres::CallbackReturnType operator()(const ceres::IterationSummary&) override {
        return res_.evals >= max_evals_ ? ceres::SOLVER_TERMINATE_SUCCESSFULLY : ceres::SOLVER_CONTINUE;
    }

private:
    const OptimResult& res_;
    int max_evals_;
};

}  // namespace

OptimResult lbfgs_minimize(const Objective& f, const Vector& x0, const LbfgsOptions& opt) {
    const auto t0 = Clock::now();
    OptimResult res;
    res.x = x0;
    res.value = kInf;
    if (opt.max_evals <= 0) return res;

    ceres::GradientProblem problem(new CountingFunction(f, x0.size(), opt.max_evals, res, t0));
    BudgetCallback budget(res, opt.max_evals);
    ceres::GradientProblemSolver::Options options;
    options.line_search_direction_type = ceres::LBFGS;
    options.line_search_type = ceres::WOLFE;
    options.max_lbfgs_rank = opt.memory;
    options.line_search_sufficient_function_decrease = opt.c1;
    options.line_search_sufficient_curvature_decrease = opt.c2;
    options.function_tolerance = opt.ftol;
    options.gradient_tolerance = opt.gtol;
    options.parameter_tolerance = 1e-14;
    options.max_num_iterations = opt.max_evals;
    options.logging_type = ceres::SILENT;
    options.minimizer_progress_to_stdout = false;
    options.callbacks.push_back(&budget);

    Vector x = x0;
    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(options, problem, x.data(), &summary);
    res.iterations = static_cast<int>(summary.iterations.size());
    res.converged = summary.termination_type == ceres::CONVERGENCE;
    const bool out_of_budget = res.evals >= opt.max_evals;
    res.line_search_failed = !res.converged && !out_of_budget && summary.termination_type == ceres::FAILURE;
    if (!std::isfinite(res.value)) res.line_search_failed = true;
    return res;
}

Adam::Adam(Index n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

Vector Adam::step(const Vector& x, const Vector& grad) {
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    const Vector mhat = m_ / c1;
    const Vector vhat = v_ / c2;
    return x - lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
}

void TrainConfig::validate() const {
    if (max_evals < 0) throw ArgumentError("max_evals must be non-negative");
    if (minibatch < 1) throw ArgumentError("minibatch must be positive");
    if (inner_sweeps < 1) throw ArgumentError("inner_sweeps must be positive");
    if (!(learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
    if (blocks < 0) throw ArgumentError("blocks must be non-negative");
    if (quad_nodes < 2) throw ArgumentError("quad_nodes must be at least 2");
}

BlockPartition regression_partition(Index N, double alpha, int blocks) {
    if (alpha == 0.0) return BlockPartition::vfe_limit(N);
    if (blocks == 0 || blocks == N) return BlockPartition::singletons(N, alpha);
    return BlockPartition::contiguous(N, blocks, alpha);
}

ObjectiveValue regression_objective_grads(const TrainableParams& params, const Matrix& X, const Vector& y,
                                          const BlockPartition& partition) {
    const EnergyGrad eg = regression_energy_grad(X, y, params.Z, params.h, partition);
    const int D = params.h.dim();
    ObjectiveValue out;
    out.value = -eg.energy;
    out.grad.resize(params.size());
    out.grad.head(D) = -eg.d_log_lengthscales;
    out.grad(D) = -eg.d_log_signal_var;
    out.grad(D + 1) = -eg.d_log_noise_var;
    for (Index m = 0; m < params.Z.rows(); ++m)
        for (int d = 0; d < D; ++d) out.grad(D + 2 + m * D + d) = -eg.d_Z(m, d);
    return out;
}

ObjectiveValue classification_objective_grads(const TrainableParams& params, const Matrix& X,
                                              const Vector& y_signed, const std::vector<SiteFactor>& sites,
                                              double alpha, const Likelihood& lik) {
    const LowRankSystem sys = LowRankSystem::build(X, params.Z, params.h);
    const Index N = sys.N(), M = sys.M();
    const int D = params.h.dim();
    if (static_cast<Index>(sites.size()) != N || y_signed.size() != N)
        throw ArgumentError("one site and one label per datum are required");

    Vector tau(N), hn(N), g(N);
    for (Index n = 0; n < N; ++n) {
        tau(n) = sites[n].tau();
        hn(n) = sites[n].nat_mean();
        g(n) = sites[n].flat() ? 0.0 : sites[n].g;
    }
    const Matrix& Phi = sys.Phi;
    Matrix A = Matrix::Identity(M, M);
    A.noalias() += Phi * tau.asDiagonal() * Phi.transpose();
    Eigen::LLT<Matrix> chol(A);
    if (chol.info() != Eigen::Success) throw NumericalError("site precision leaves the posterior indefinite");
    const Vector b = Phi * hn;
    const Vector Ainv_b = chol.solve(b);
    const Matrix AinvPhi = chol.solve(Phi);
    const Matrix L = chol.matrixL();

    double F = -L.diagonal().array().log().sum() + 0.5 * b.dot(Ainv_b);
    Vector lam(N), kap(N), del(N);
    for (Index n = 0; n < N; ++n) {
        const double mu = Phi.col(n).dot(Ainv_b);
        const double s = Phi.col(n).dot(AinvPhi.col(n));
        const double P = alpha * tau(n);
        const double c = 1.0 - P * s;
        if (!(c > 0.0)) throw CavityError("cavity variance is not positive at datum " + std::to_string(n));
        const double e = mu - P * g(n) * s;
        const double m_c = mu + P * s * (mu - g(n)) / c;
        const double v_c = sys.diag_D(n) + s / c;
        const TiltedMoments tm = lik.tilted(m_c, v_c, y_signed(n), alpha);
        const double dv = tm.dlogz_dv();
        const double gdiff =
            -0.5 * std::log(c) + 0.5 * (-2.0 * P * g(n) * mu + P * P * g(n) * g(n) * s + (P / c) * e * e);
        F += (tm.log_z + gdiff) / alpha;
        const double r = g(n) - e / c;
        lam(n) = (tm.d1 / c - P * g(n) + P * e / c) / alpha;
        kap(n) = (tm.d1 * P * (mu - g(n)) / (c * c) + dv / (c * c) + P / (2.0 * c) + 0.5 * P * P * r * r) / alpha;
        del(n) = dv / alpha;
    }

    // Phi H for H = dF/dQ, built without forming N x N matrices.
    const Vector a = hn - tau.cwiseProduct(Phi.transpose() * Ainv_b);
    const Vector lam_t = lam - tau.cwiseProduct(AinvPhi.transpose() * (Phi * lam));
    const Vector Phi_a = Phi * a;
    const Vector Phi_lt = chol.solve(Phi * lam);
    Matrix PhiH = 0.5 * Phi_a * a.transpose();
    PhiH.noalias() -= 0.5 * AinvPhi * tau.asDiagonal();
    PhiH.noalias() += 0.5 * (Phi_lt * a.transpose() + Phi_a * lam_t.transpose());
    const Matrix PhiK = Phi * kap.asDiagonal();
    PhiH.noalias() += chol.solve(PhiK);
    const Matrix PKP = PhiK * Phi.transpose();
    PhiH.noalias() -= chol.solve(PKP) * (AinvPhi * tau.asDiagonal());
    PhiH.noalias() -= Phi * del.asDiagonal();

    const auto Lu = sys.chol_Kuu.L.triangularView<Eigen::Lower>();
    const Matrix WH = Lu.transpose().solve(PhiH);
    const Matrix dKuf = 2.0 * WH;
    Matrix dKuu = -(WH * sys.W.transpose());
    dKuu = 0.5 * (dKuu + dKuu.transpose()).eval();

    Vector d_ls = Vector::Zero(D);
    double d_sf2 = 0.0;
    Matrix d_Z = Matrix::Zero(M, D);
    if (N > 0) gram_vjp(params.Z, X, sys.Kuf, dKuf, params.h, d_ls, d_sf2, &d_Z);
    gram_vjp(params.Z, params.Z, sys.Kuu, dKuu, params.h, d_ls, d_sf2, &d_Z, true);
    d_sf2 += params.h.signal_var() * del.sum();

    ObjectiveValue out;
    out.value = -F;
    out.grad = Vector::Zero(params.size());
    out.grad.head(D) = -d_ls;
    out.grad(D) = -d_sf2;
    for (Index m = 0; m < M; ++m)
        for (int d = 0; d < D; ++d) out.grad(D + 2 + m * D + d) = -d_Z(m, d);
    return out;
}

RegressionFit fit_regression(const Matrix& X, const Vector& y, Index M, const TrainConfig& cfg,
                             const TrainableParams* init) {
    cfg.validate();
    if (X.rows() != y.size()) throw ArgumentError("X and y have different lengths");
    if (M > X.rows()) throw ArgumentError("need N >= M");
    const TrainableParams p0 = init ? *init : initial_params(X, y, M, cfg.seed);
    const int D = static_cast<int>(X.cols());
    const BlockPartition part = regression_partition(X.rows(), cfg.alpha, cfg.blocks);
    Objective f = [&](const Vector& x) {
        return regression_objective_grads(TrainableParams::from_vector(x, D, M), X, y, part);
    };

    RegressionFit fit;
    fit.params = p0;
    if (cfg.max_evals > 0) {
        LbfgsOptions opt;
        opt.max_evals = cfg.max_evals;
        const OptimResult r = lbfgs_minimize(f, p0.to_vector(), opt);
        fit.params = TrainableParams::from_vector(r.x, D, M);
        fit.params.iterations = r.iterations;
        fit.evals = r.evals;
        fit.converged = r.converged;
        fit.flagged = r.line_search_failed;
        fit.trace = r.trace;
    }
    const LowRankSystem sys = LowRankSystem::build(X, fit.params.Z, fit.params.h);
    fit.state = collapsed_posterior(sys, y, part);
    fit.energy = pep_regression_energy(X, y, fit.params.Z, fit.params.h, part);
    return fit;
}

ClassificationFit fit_classification(const Matrix& X, const Vector& labels, Index M, double alpha,
                                     const TrainConfig& cfg, const TrainableParams* init) {
    cfg.validate();
    if (X.rows() != labels.size()) throw ArgumentError("X and labels have different lengths");
    const Vector y = to_signed_labels(labels);
    const Index N = X.rows();
    const int D = static_cast<int>(X.cols());
    const double a = std::max(alpha, kMinAlpha);
    const ProbitLik lik(cfg.quad_nodes);

    TrainableParams params;
    if (init) {
        params = *init;
    } else {
        params = initial_params(X, y, M, cfg.seed);
        params.h.log_signal_var = 0.0;
    }
    PEPConfig pc;
    pc.alpha = a;
    pc.parallel_updates = cfg.parallel_updates;

    std::vector<SiteFactor> sites = init_state(M, N).sites;
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<Index> order(N);
    std::iota(order.begin(), order.end(), Index{0});
    const Index batch = std::min<Index>(cfg.minibatch, N);
    Index cursor = N;

    Adam adam(params.size(), cfg.learning_rate);
    ClassificationFit fit;
    const auto t0 = Clock::now();
    double best = kInf;

    auto refresh_sweeps = [&](const TrainableParams& p, std::vector<SiteFactor>& s) {
        const LowRankSystem sys = LowRankSystem::build(X, p.Z, p.h);
        PosteriorState st = posterior_from_sites(sys, s);
        for (int k = 0; k < cfg.inner_sweeps; ++k) {
            if (cursor + batch > N) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            IndexList subset(order.begin() + cursor, order.begin() + cursor + batch);
            std::sort(subset.begin(), subset.end());
            cursor += batch;
            sweep(sys, st, s, y, lik, pc, &subset);
        }
    };

    for (int step = 0; step < cfg.max_evals; ++step) {
        try {
            refresh_sweeps(params, sites);
        } catch (const NumericalError&) {
            sites = init_state(M, N).sites;
            refresh_sweeps(params, sites);
        }
        ObjectiveValue ov;
        bool ok = true;
        try {
            ov = classification_objective_grads(params, X, y, sites, a, lik);
            ok = std::isfinite(ov.value) && ov.grad.allFinite() && ov.grad.norm() <= 1e6;
        } catch (const std::exception&) {
            ok = false;
        }
        TraceEntry e;
        e.iteration = step + 1;
        e.seconds = seconds_since(t0);
        if (!ok) {
            ++fit.rejected_steps;
            adam.set_learning_rate(0.5 * adam.learning_rate());
            e.objective = kInf;
            e.best = best;
            e.grad_norm = kInf;
            fit.trace.push_back(e);
            continue;
        }
        best = std::min(best, ov.value);
        e.objective = ov.value;
        e.best = best;
        e.grad_norm = ov.grad.norm();
        fit.trace.push_back(e);
        const Vector next = adam.step(params.to_vector(), ov.grad);
        TrainableParams cand = TrainableParams::from_vector(next, D, M);
        try {
            const LowRankSystem sys = LowRankSystem::build(X, cand.Z, cand.h);
            posterior_from_sites(sys, sites);
            params = cand;
        } catch (const std::exception&) {
            ++fit.rejected_steps;
            adam.set_learning_rate(0.5 * adam.learning_rate());
        }
        ++fit.steps;
    }
    params.iterations = fit.steps;

    // Converge the sites at the final parameters before reporting.
    const LowRankSystem sys = LowRankSystem::build(X, params.Z, params.h);
    PosteriorState st;
    try {
        st = posterior_from_sites(sys, sites);
    } catch (const NumericalError&) {
        sites = init_state(M, N).sites;
        st = posterior_from_sites(sys, sites);
    }
    PEPConfig final_cfg = pc;
    final_cfg.max_sweeps = 50;
    for (int it = 0; it < final_cfg.max_sweeps; ++it) {
        const SweepStats s = sweep(sys, st, sites, y, lik, final_cfg);
        st = posterior_from_sites(sys, sites);
        if (s.max_change < final_cfg.tol) break;
    }
    fit.params = params;
    fit.state = st;
    fit.sites = sites;
    fit.energy = pep_energy(sys, sites, y, lik, a);
    return fit;
}

GradCheckReport grad_check(const Objective& f, const Vector& x, double step, double tolerance, double floor) {
    GradCheckReport rep;
    rep.analytic = f(x).grad;
    rep.numeric.resize(x.size());
    for (Index i = 0; i < x.size(); ++i) {
        const double hstep = step * std::max(1.0, std::abs(x(i)));
        auto central = [&](double h) {
            Vector xp = x, xm = x;
            xp(i) += h;
            xm(i) -= h;
            return (f(xp).value - f(xm).value) / (2.0 * h);
        };
        // Richardson extrapolation cancels the h^2 term of the central difference.
        rep.numeric(i) = (4.0 * central(0.5 * hstep) - central(hstep)) / 3.0;
        const double denom = std::max({std::abs(rep.analytic(i)), std::abs(rep.numeric(i)), floor});
        const double err = std::abs(rep.analytic(i) - rep.numeric(i)) / denom;
        if (!(err <= tolerance)) rep.failing.push_back(i);
        if (!(err <= rep.max_rel_error)) {
            rep.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
            rep.worst = i;
        }
    }
    return rep;
}

}  // namespace pep
