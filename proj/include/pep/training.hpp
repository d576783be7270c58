#pragma once

#include "pep/energy.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace pep {

// Flat layout: log-lengthscales (D), log signal variance, log noise variance, Z row-major (M*D).
struct TrainableParams {
    KernelHyper h;
    Matrix Z;
    int iterations = 0;

    Index size() const { return h.dim() + 2 + Z.size(); }
    Vector to_vector() const;
    static TrainableParams from_vector(const Vector& x, int dim, Index M);
};

// Lengthscales from the input spread, signal variance var(y), noise 0.1 var(y), Z a
// seeded random subset of the inputs.
TrainableParams initial_params(const Matrix& X, const Vector& y, Index M, std::uint64_t seed);

struct TraceEntry {
    int iteration = 0;
    double objective = 0.0;
    double best = 0.0;
    double grad_norm = 0.0;
    double seconds = 0.0;
};

struct ObjectiveValue {
    double value = 0.0;
    Vector grad;
};
using Objective = std::function<ObjectiveValue(const Vector&)>;

struct OptimResult {
    Vector x;
    double value = 0.0;
    int evals = 0;
    int iterations = 0;
    bool converged = false;
    bool line_search_failed = false;
    std::vector<TraceEntry> trace;
};

struct LbfgsOptions {
    int max_evals = 2000;
    int memory = 10;
    double gtol = 1e-6;   // on the infinity norm of the gradient
    double ftol = 1e-12;  // relative decrease between iterations
    double c1 = 1e-4;
    double c2 = 0.9;
};

// Minimises the objective; failed evaluations (exceptions, non-finite values) are treated
// as +inf and the line search backs off. The returned point is the best one evaluated.
OptimResult lbfgs_minimize(const Objective& f, const Vector& x0, const LbfgsOptions& opt = {});

class Adam {
public:
    explicit Adam(Index n, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    Vector step(const Vector& x, const Vector& grad);
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    double lr_, b1_, b2_, eps_;
    Vector m_, v_;
    int t_ = 0;
};

// Regression runs L-BFGS on the collapsed energy. Classification alternates minibatch
// site sweeps with Adam steps on the energy at fixed sites; max_evals counts those steps.
struct TrainConfig {
    int max_evals = 2000;
    int minibatch = 200;
    int inner_sweeps = 1;
    std::uint64_t seed = 0;
    double learning_rate = 1e-3;
    // Regression partition: alpha = 0 selects VFE, blocks = 0 one block per datum.
    double alpha = 1.0;
    int blocks = 0;
    bool parallel_updates = true;
    int quad_nodes = 20;

    void validate() const;
};

BlockPartition regression_partition(Index N, double alpha, int blocks);

// Negative collapsed energy and its gradient in the flat layout.
ObjectiveValue regression_objective_grads(const TrainableParams& params, const Matrix& X, const Vector& y,
                                          const BlockPartition& partition);

// Negative PEP energy for classification with the sites held fixed, and its gradient.
ObjectiveValue classification_objective_grads(const TrainableParams& params, const Matrix& X,
                                              const Vector& y_signed, const std::vector<SiteFactor>& sites,
                                              double alpha, const Likelihood& lik);

struct RegressionFit {
    TrainableParams params;
    PosteriorState state;
    double energy = 0.0;
    int evals = 0;
    bool converged = false;
    bool flagged = false;  // line search failed before convergence
    std::vector<TraceEntry> trace;
};

RegressionFit fit_regression(const Matrix& X, const Vector& y, Index M, const TrainConfig& cfg,
                             const TrainableParams* init = nullptr);

struct ClassificationFit {
    TrainableParams params;
    PosteriorState state;
    std::vector<SiteFactor> sites;
    double energy = 0.0;
    int steps = 0;
    int rejected_steps = 0;
    std::vector<TraceEntry> trace;
};

// Labels may be {0,1} or {-1,+1}. alpha below the PEP floor is raised to it.
ClassificationFit fit_classification(const Matrix& X, const Vector& labels, Index M, double alpha,
                                     const TrainConfig& cfg, const TrainableParams* init = nullptr);

struct GradCheckReport {
    double max_rel_error = 0.0;
    Index worst = -1;
    std::vector<Index> failing;
    Vector analytic;
    Vector numeric;
    bool ok() const { return failing.empty(); }
};

// Richardson-extrapolated central differences with step * max(1, |x_i|). Errors are relative to
// max(|analytic|, |numeric|, floor) so tiny components are judged absolutely.
GradCheckReport grad_check(const Objective& f, const Vector& x, double step, double tolerance,
                           double floor = 1e-3);

}  // namespace pep
