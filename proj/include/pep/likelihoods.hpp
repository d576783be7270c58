#pragma once

#include "pep/common.hpp"

#include <memory>
#include <string>

namespace pep {

// log of the tilted normaliser and its first two derivatives wrt the cavity mean.
struct TiltedMoments {
    double log_z = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
    // d log_z / d v_cav, which follows from d1 and d2 for any likelihood.
    double dlogz_dv() const { return 0.5 * (d2 + d1 * d1); }
};

double normal_cdf(double z);
double log_normal_cdf(double z);
double log_normal_pdf(double z);
// phi(z) / Phi(z), evaluated in the log domain.
double inv_mills(double z);
// Solves log Phi(x) = c for c <= 0.
double inverse_log_normal_cdf(double c);

struct GaussHermiteRule {
    Vector nodes;
    Vector weights;  // for the weight function exp(-x^2)
};

// Rules are built once per node count and shared.
const GaussHermiteRule& gauss_hermite(int Q);

TiltedMoments gaussian_tilted(double m_cav, double v_cav, double y, double alpha, double sigma2_y);
TiltedMoments probit_tilted_quad(double m_cav, double v_cav, double y, double alpha, int Q = 20);
TiltedMoments probit_tilted_analytic(double m_cav, double v_cav, double y);

class Likelihood {
public:
    virtual ~Likelihood() = default;
    virtual TiltedMoments tilted(double m_cav, double v_cav, double y, double alpha) const = 0;
    virtual bool is_gaussian() const = 0;
    virtual std::string name() const = 0;
};

class GaussianLik : public Likelihood {
public:
    explicit GaussianLik(double sigma2_y);
    TiltedMoments tilted(double m_cav, double v_cav, double y, double alpha) const override {
        return gaussian_tilted(m_cav, v_cav, y, alpha, sigma2_y);
    }
    bool is_gaussian() const override { return true; }
    std::string name() const override { return "gaussian"; }
    double sigma2_y;
};

class ProbitLik : public Likelihood {
public:
    explicit ProbitLik(int Q = 20);
    TiltedMoments tilted(double m_cav, double v_cav, double y, double alpha) const override {
        return probit_tilted_quad(m_cav, v_cav, y, alpha, Q);
    }
    bool is_gaussian() const override { return false; }
    std::string name() const override { return "probit"; }
    int Q;
};

// {0,1} or {-1,+1} labels to {-1,+1}; anything else is an ArgumentError.
Vector to_signed_labels(const Vector& labels);

}  // namespace pep
