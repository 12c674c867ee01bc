#pragma once

#include <cmath>
#include <string>

#include "error.hpp"
#include "family.hpp"
#include "lasso.hpp"
#include "normal.hpp"
#include "theta.hpp"
#include "types.hpp"

namespace dbglm {

/**
 * One-step de-biased lasso: b = xi_hat - Theta * score(xi_hat), with
 * model-based standard errors sqrt(Theta_j Sigma_hat Theta_j' / n).
 */
struct DebiasedEstimate
{
    Vector b;
    Vector se;
    ThetaMethod method = ThetaMethod::hessian_inverse;
    double lambda_used = 0.0;
    Index n = 0;
};

struct ConfidenceInterval
{
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double level = 0.95;
    double z_value = 0.0;
    double se = 0.0;

    bool contains(double v) const { return lower <= v && v <= upper; }
    double width() const { return upper - lower; }
};

/// Terms of the exact decomposition
///   xi_hat + I + II + III - xi0 = -Theta * score(xi0).
struct BiasAudit
{
    Vector term_I;
    Vector term_II;
    Vector term_III;
    Vector delta;
    double residual_identity_error = 0.0;
};

namespace detail {

inline void check_theta_dims(ThetaMatrix const& theta, Dataset const& data)
{
    Index d = data.p() + 1;
    if (theta.values.rows() != d || theta.values.cols() != d)
        throw DimensionError("Theta is " + std::to_string(theta.values.rows()) + "x" +
                             std::to_string(theta.values.cols()) + " but the design has " + std::to_string(d) +
                             " coefficients");
}

} // namespace detail

inline DebiasedEstimate debias(LassoFit const& fit, ThetaMatrix const& theta, GlmFamily family, Dataset const& data)
{
    detail::check_theta_dims(theta, data);
    if (fit.xi_hat.xi().size() != data.p() + 1)
        throw DimensionError("lasso fit does not match the design");

    Vector const& xi = fit.xi_hat.xi();
    Vector score = score_vector(family, data, xi);
    Matrix sigma = hessian_matrix(family, data, xi);
    double const n = static_cast<double>(data.n());

    DebiasedEstimate est;
    est.b = xi - theta.values * score;
    Matrix TS = theta.values * sigma;
    est.se = (TS.cwiseProduct(theta.values)).rowwise().sum() / n;
    for (Index j = 0; j < est.se.size(); ++j) {
        if (!(est.se(j) > 0.0))
            throw DegenerateError("model-based variance for coefficient " + std::to_string(j) + " is not positive", j);
        est.se(j) = std::sqrt(est.se(j));
    }
    est.method = theta.method;
    est.lambda_used = fit.lambda;
    est.n = data.n();
    return est;
}

inline ConfidenceInterval make_interval(double point, double se, double level)
{
    if (!(level > 0.0 && level < 1.0))
        throw InputError("confidence level must lie in (0, 1)");
    ConfidenceInterval ci;
    ci.point = point;
    ci.level = level;
    ci.se = se;
    ci.z_value = normal_critical_value(level);
    ci.lower = point - ci.z_value * se;
    ci.upper = point + ci.z_value * se;
    return ci;
}

inline ConfidenceInterval coefficient_ci(DebiasedEstimate const& est, Index j, double level)
{
    if (j < 0 || j >= est.b.size())
        throw DimensionError("coefficient index " + std::to_string(j) + " out of range");
    return make_interval(est.b(j), est.se(j), level);
}

/**
 * Interval for alpha' xi0 with ||alpha||_2 = 1, studentized by
 * sqrt(alpha' Theta alpha / n). Only defined for the Hessian-inverse Theta;
 * `sigma_hat` must be the Hessian it inverts.
 */
inline ConfidenceInterval contrast_ci(DebiasedEstimate const& est, ThetaMatrix const& theta, Matrix const& sigma_hat,
                                      Vector const& alpha, double level)
{
    Index d = est.b.size();
    if (theta.method != ThetaMethod::hessian_inverse)
        throw InputError("contrast intervals require the Hessian-inverse estimate; the node-wise "
                         "estimate carries no joint normality guarantee for linear combinations");
    if (alpha.size() != d || theta.values.rows() != d || sigma_hat.rows() != d || sigma_hat.cols() != d)
        throw DimensionError("contrast, Theta and Sigma dimensions disagree");
    double norm = alpha.norm();
    if (std::abs(norm - 1.0) > 1e-8)
        throw NormalizationError("contrast weights must have unit Euclidean norm (got " + std::to_string(norm) + ")");
    double resid = (theta.values * sigma_hat - Matrix::Identity(d, d)).cwiseAbs().maxCoeff();
    if (resid > 1e-6)
        throw InputError("Theta is not the inverse of Sigma_hat (max residual " + std::to_string(resid) + ")");

    double var = alpha.dot(theta.values * alpha) / static_cast<double>(est.n);
    if (!(var > 0.0))
        throw DegenerateError("contrast variance is not positive");
    return make_interval(alpha.dot(est.b), std::sqrt(var), level);
}

/**
 * Splits the de-biased estimator's error into the score term (I), the
 * Taylor remainder term (II) and the Hessian-inversion term (III). Requires
 * the true coefficients, so only meaningful in simulation.
 */
inline BiasAudit decomposition_audit(LassoFit const& fit, ThetaMatrix const& theta, GlmFamily family,
                                     Dataset const& data, CoefficientVector const& xi_true)
{
    detail::check_theta_dims(theta, data);
    Index d = data.p() + 1;
    if (xi_true.xi().size() != d || fit.xi_hat.xi().size() != d)
        throw DimensionError("coefficient vectors do not match the design");

    Vector const& xi_hat = fit.xi_hat.xi();
    Vector const& xi0 = xi_true.xi();
    Vector s_hat = score_vector(family, data, xi_hat);
    Vector s0 = score_vector(family, data, xi0);
    Matrix sigma = hessian_matrix(family, data, xi_hat);
    Matrix const& T = theta.values;

    BiasAudit a;
    a.delta = s0 - s_hat - sigma * (xi0 - xi_hat);
    a.term_I = -T * s_hat;
    a.term_II = -T * a.delta;
    a.term_III = (T * sigma - Matrix::Identity(d, d)) * (xi_hat - xi0);
    Vector lhs = xi_hat + a.term_I + a.term_II + a.term_III - xi0;
    a.residual_identity_error = (lhs + T * s0).cwiseAbs().maxCoeff();
    return a;
}

} // namespace dbglm
