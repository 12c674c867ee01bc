#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "error.hpp"
#include "types.hpp"

namespace dbglm {

enum class FamilyKind { gaussian, logistic, poisson };

/**
 * Canonical-link exponential family with loss rho(y, a) = -y a + b(a).
 *
 *   gaussian: b(a) = a^2 / 2
 *   logistic: b(a) = log(1 + e^a)
 *   poisson:  b(a) = e^a
 */
struct GlmFamily
{
    FamilyKind kind = FamilyKind::gaussian;

    /// Poisson linear predictors above this raise OverflowError.
    static constexpr double max_poisson_eta = 700.0;

    static GlmFamily gaussian() { return {FamilyKind::gaussian}; }
    static GlmFamily logistic() { return {FamilyKind::logistic}; }
    static GlmFamily poisson() { return {FamilyKind::poisson}; }

    std::string_view name() const
    {
        switch (kind) {
        case FamilyKind::gaussian: return "gaussian";
        case FamilyKind::logistic: return "logistic";
        case FamilyKind::poisson: return "poisson";
        }
        return "unknown";
    }

    static std::optional<GlmFamily> parse(std::string_view s)
    {
        if (s == "gaussian") return gaussian();
        if (s == "logistic" || s == "binomial") return logistic();
        if (s == "poisson") return poisson();
        return std::nullopt;
    }

    friend bool operator==(GlmFamily, GlmFamily) = default;

    void check_eta(double eta, std::ptrdiff_t sample = -1) const
    {
        bool bad = !std::isfinite(eta) || (kind == FamilyKind::poisson && eta > max_poisson_eta);
        if (bad) {
            std::string msg = "linear predictor " + std::to_string(eta) + " overflows the " +
                              std::string(name()) + " family";
            if (sample >= 0)
                msg += " at sample " + std::to_string(sample);
            throw OverflowError(msg, sample);
        }
    }

    /// Cumulant function b(a).
    double b(double a) const
    {
        switch (kind) {
        case FamilyKind::gaussian: return 0.5 * a * a;
        case FamilyKind::logistic: return std::log1p(std::exp(-std::abs(a))) + std::max(a, 0.0);
        case FamilyKind::poisson: check_eta(a); return std::exp(a);
        }
        return 0.0;
    }

    /// b'(a), the conditional mean.
    double mean(double a) const
    {
        switch (kind) {
        case FamilyKind::gaussian: return a;
        case FamilyKind::logistic:
            if (a >= 0.0)
                return 1.0 / (1.0 + std::exp(-a));
            else {
                double e = std::exp(a);
                return e / (1.0 + e);
            }
        case FamilyKind::poisson: check_eta(a); return std::exp(a);
        }
        return 0.0;
    }

    /// b''(a), the variance function evaluated at the mean.
    double variance(double a) const
    {
        switch (kind) {
        case FamilyKind::gaussian: return 1.0;
        case FamilyKind::logistic: {
            double e = std::exp(-std::abs(a));
            double d = 1.0 + e;
            return e / (d * d);
        }
        case FamilyKind::poisson: check_eta(a); return std::exp(a);
        }
        return 0.0;
    }

    bool valid_response(double y) const
    {
        if (!std::isfinite(y)) return false;
        switch (kind) {
        case FamilyKind::gaussian: return true;
        case FamilyKind::logistic: return y == 0.0 || y == 1.0;
        case FamilyKind::poisson: return y >= 0.0;
        }
        return false;
    }

    /// Intercept-only MLE, b'^{-1}(mean(y)). Undefined when the mean sits on
    /// the boundary of the mean space.
    double intercept_only(Vector const& y) const
    {
        double ybar = y.mean();
        switch (kind) {
        case FamilyKind::gaussian: return ybar;
        case FamilyKind::logistic:
            if (!(ybar > 0.0 && ybar < 1.0))
                throw DegenerateError("intercept-only logistic fit undefined: response is constant");
            return std::log(ybar / (1.0 - ybar));
        case FamilyKind::poisson:
            if (!(ybar > 0.0))
                throw DegenerateError("intercept-only poisson fit undefined: response is all zero");
            return std::log(ybar);
        }
        return 0.0;
    }
};

inline double loss(GlmFamily family, double y, double eta)
{
    family.check_eta(eta);
    return -y * eta + family.b(eta);
}

inline double loss_grad(GlmFamily family, double y, double eta)
{
    family.check_eta(eta);
    return -y + family.mean(eta);
}

inline double loss_hess(GlmFamily family, double /*y*/, double eta)
{
    family.check_eta(eta);
    return family.variance(eta);
}

inline void validate(GlmFamily family, Dataset const& data)
{
    for (Index i = 0; i < data.n(); ++i) {
        if (!family.valid_response(data.y()(i)))
            throw InputError("response " + std::to_string(data.y()(i)) + " at row " +
                             std::to_string(i) + " is invalid for the " +
                             std::string(family.name()) + " family");
    }
}

inline Vector linear_predictor(GlmFamily family, Matrix const& X, Vector const& xi)
{
    if (X.cols() != xi.size())
        throw DimensionError("coefficient length " + std::to_string(xi.size()) +
                             " does not match design width " + std::to_string(X.cols()));
    Vector eta = X * xi;
    for (Index i = 0; i < eta.size(); ++i)
        family.check_eta(eta(i), i);
    return eta;
}

/// Empirical loss (1/n) sum rho(y_i, x_i' xi).
inline double empirical_loss(GlmFamily family, Dataset const& data, Vector const& xi)
{
    Vector eta = linear_predictor(family, data.X(), xi);
    double s = 0.0;
    for (Index i = 0; i < eta.size(); ++i)
        s += -data.y()(i) * eta(i) + family.b(eta(i));
    return s / static_cast<double>(data.n());
}

inline Vector score_vector(GlmFamily family, Dataset const& data, Vector const& xi)
{
    Vector eta = linear_predictor(family, data.X(), xi);
    Vector g(eta.size());
    for (Index i = 0; i < eta.size(); ++i)
        g(i) = family.mean(eta(i)) - data.y()(i);
    return data.X().transpose() * g / static_cast<double>(data.n());
}

inline Vector score_vector(GlmFamily family, Dataset const& data, CoefficientVector const& xi)
{
    return score_vector(family, data, xi.xi());
}

/// Square-root weights omega_i = sqrt(rho''(y_i, x_i' xi)).
inline Vector hessian_weights(GlmFamily family, Dataset const& data, Vector const& xi)
{
    Vector eta = linear_predictor(family, data.X(), xi);
    Vector w(eta.size());
    for (Index i = 0; i < eta.size(); ++i)
        w(i) = std::sqrt(family.variance(eta(i)));
    return w;
}

/// Weighted design W X, so that the Hessian is (W X)'(W X) / n.
inline Matrix weighted_design(GlmFamily family, Dataset const& data, Vector const& xi)
{
    return hessian_weights(family, data, xi).asDiagonal() * data.X();
}

inline Matrix hessian_matrix(GlmFamily family, Dataset const& data, Vector const& xi)
{
    Matrix Xw = weighted_design(family, data, xi);
    Matrix H = Xw.transpose() * Xw / static_cast<double>(data.n());
    Matrix S = 0.5 * (H + H.transpose());
    return S;
}

inline Matrix hessian_matrix(GlmFamily family, Dataset const& data, CoefficientVector const& xi)
{
    return hessian_matrix(family, data, xi.xi());
}

} // namespace dbglm
