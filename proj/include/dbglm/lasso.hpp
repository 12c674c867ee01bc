#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "family.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace dbglm {

inline double soft_threshold(double z, double t)
{
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

struct SolverOptions
{
    int max_outer = 100;
    double outer_tol = 1e-8;   // max absolute coefficient change between outer steps
    double inner_tol = 1e-10;  // same, between coordinate-descent sweeps
    int max_sweeps = 10000;
    double kkt_tolerance = 1e-6;
};

enum class FitStatus {
    converged,
    max_outer_iterations,  // outer loop cap hit
    max_sweeps,            // inner coordinate-descent cap hit
    stalled,               // line search could not decrease the objective
    kkt_violation,         // steps vanished but the KKT residual is above tolerance
};

inline char const* to_string(FitStatus s)
{
    switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::max_outer_iterations: return "max_outer_iterations";
    case FitStatus::max_sweeps: return "max_sweeps";
    case FitStatus::stalled: return "stalled";
    case FitStatus::kkt_violation: return "kkt_violation";
    }
    return "unknown";
}

struct LassoFit
{
    CoefficientVector xi_hat;
    double lambda = 0.0;
    double objective = 0.0;
    double kkt_residual = 0.0;
    int iterations = 0;
    bool converged = false;
    FitStatus status = FitStatus::converged;
    /// Penalized objective after every accepted outer step, starting point first.
    std::vector<double> objective_trace;
};

inline double penalized_objective(GlmFamily family, Dataset const& data, Vector const& xi, double lambda)
{
    return empirical_loss(family, data, xi) + lambda * xi.tail(xi.size() - 1).lpNorm<1>();
}

/// Largest violation of the lasso optimality conditions; the intercept must
/// have zero score.
inline double kkt_residual(GlmFamily family, Dataset const& data, Vector const& xi, double lambda)
{
    Vector s = score_vector(family, data, xi);
    double r = std::abs(s(0));
    for (Index j = 1; j < xi.size(); ++j) {
        double v;
        if (xi(j) == 0.0)
            v = std::max(0.0, std::abs(s(j)) - lambda);
        else
            v = std::abs(s(j) + lambda * (xi(j) > 0.0 ? 1.0 : -1.0));
        r = std::max(r, v);
    }
    return r;
}

inline Vector intercept_only_xi(GlmFamily family, Dataset const& data)
{
    Vector xi = Vector::Zero(data.p() + 1);
    xi(0) = family.intercept_only(data.y());
    return xi;
}

/// Smallest lambda at which every penalized coefficient is zero.
inline double lambda_max(GlmFamily family, Dataset const& data)
{
    Vector xi = intercept_only_xi(family, data);
    Vector s = score_vector(family, data, xi);
    double m = data.p() > 0 ? s.tail(data.p()).cwiseAbs().maxCoeff() : 0.0;
    if (!(m > 0.0))
        throw DegenerateError("lambda_max is zero: the response is constant or uncorrelated with every covariate");
    return m;
}

/// n_lambda values from lmax down to ratio * lmax, evenly spaced on the log scale.
inline Vector log_spaced_grid(double lmax, int n_lambda, double ratio)
{
    if (n_lambda < 2) throw InputError("lambda grid needs at least 2 points");
    if (!(ratio > 0.0 && ratio < 1.0)) throw InputError("lambda ratio must lie in (0, 1)");
    if (!(lmax > 0.0)) throw InputError("lambda_max must be positive");
    Vector g(n_lambda);
    double step = std::log(ratio) / (n_lambda - 1);
    for (int k = 0; k < n_lambda; ++k)
        g(k) = lmax * std::exp(step * k);
    g(0) = lmax;
    g(n_lambda - 1) = lmax * ratio;
    return g;
}

inline double default_lambda_ratio(Index n, Index p)
{
    return n > p ? 0.01 : 0.05;
}

inline Vector lambda_grid(GlmFamily family, Dataset const& data, int n_lambda, double ratio)
{
    return log_spaced_grid(lambda_max(family, data), n_lambda, ratio);
}

namespace detail {

/**
 * Cyclic coordinate descent for
 *   (1/2n) sum_i w_i (z_i - x_i' xi)^2 + lambda ||xi[1:]||_1
 * in residual form: `rr` holds w_i (z_i - x_i' xi) and is updated in place.
 * Returns the number of sweeps, or -1 when the sweep cap was hit.
 */
inline int weighted_cd(Matrix const& X, Vector const& w, Vector const& v, double lambda,
                       Vector& xi, Vector& rr, SolverOptions const& opt, int sweeps_used)
{
    Index const n = X.rows();
    Index const d = X.cols();
    double const inv_n = 1.0 / static_cast<double>(n);
    std::vector<Index> active;
    active.reserve(static_cast<std::size_t>(d));

    auto update = [&](Index k) {
        if (v(k) <= 0.0) return 0.0;
        auto xk = X.col(k);
        double grad = xk.dot(rr) * inv_n;
        double u = grad + v(k) * xi(k);
        double nk = (k == 0) ? u / v(k) : soft_threshold(u, lambda) / v(k);
        double delta = nk - xi(k);
        if (delta != 0.0) {
            xi(k) = nk;
            rr.array() -= delta * w.array() * xk.array();
        }
        return std::abs(delta);
    };

    // Converge on the working set, then admit every zero coordinate whose
    // update would be nonzero, read off one pass of X' rr.
    for (Index k = 0; k < d; ++k)
        if (k == 0 || xi(k) != 0.0) active.push_back(k);
    std::vector<char> in_set(static_cast<std::size_t>(d), 0);
    for (Index k : active)
        in_set[static_cast<std::size_t>(k)] = 1;
    Vector g(d);
    int sweeps = sweeps_used;
    for (;;) {
        for (;;) {
            double m = 0.0;
            for (Index k : active)
                m = std::max(m, update(k));
            ++sweeps;
            if (m < opt.inner_tol) break;
            if (sweeps >= opt.max_sweeps) return -1;
        }
        g.noalias() = X.transpose() * rr;
        g *= inv_n;
        bool added = false;
        for (Index k = 1; k < d; ++k) {
            if (in_set[static_cast<std::size_t>(k)] || v(k) <= 0.0) continue;
            if (std::abs(g(k)) > lambda) {
                active.push_back(k);
                in_set[static_cast<std::size_t>(k)] = 1;
                added = true;
            }
        }
        ++sweeps;
        if (!added) return sweeps;
        if (sweeps >= opt.max_sweeps) return -1;
        std::sort(active.begin(), active.end());
    }
}

} // namespace detail

/**
 * Lasso-penalized GLM with an unpenalized intercept.
 *
 * Outer loop: quadratic approximation of the loss at the current iterate,
 * solved by coordinate descent, then a backtracking line search along the
 * resulting direction so the penalized objective never increases.
 */
inline LassoFit fit_lasso(GlmFamily family, Dataset const& data, double lambda,
                          std::optional<CoefficientVector> const& warm_start = std::nullopt,
                          SolverOptions const& opt = {})
{
    if (!(lambda >= 0.0)) throw InputError("lambda must be nonnegative");
    validate(family, data);
    Index const n = data.n();
    Index const d = data.p() + 1;
    Matrix const& X = data.X();
    Vector const& y = data.y();

    LassoFit fit;
    fit.lambda = lambda;

    std::optional<Vector> null_xi;
    try {
        null_xi = intercept_only_xi(family, data);
    } catch (DegenerateError const&) {
    }

    // At or above lambda_max the solution is the intercept-only fit.
    if (null_xi && lambda > 0.0 && d > 1) {
        Vector s = score_vector(family, data, *null_xi);
        if (lambda >= s.tail(d - 1).cwiseAbs().maxCoeff()) {
            fit.xi_hat = CoefficientVector(*null_xi);
            fit.objective = penalized_objective(family, data, *null_xi, lambda);
            fit.objective_trace = {fit.objective};
            fit.kkt_residual = kkt_residual(family, data, *null_xi, lambda);
            fit.converged = fit.kkt_residual <= opt.kkt_tolerance;
            fit.status = fit.converged ? FitStatus::converged : FitStatus::kkt_violation;
            return fit;
        }
    }

    Vector xi;
    if (warm_start) {
        if (warm_start->xi().size() != d)
            throw DimensionError("warm start has length " + std::to_string(warm_start->xi().size()) +
                                 ", expected " + std::to_string(d));
        xi = warm_start->xi();
    } else {
        xi = null_xi ? *null_xi : Vector::Zero(d);
    }

    auto l1 = [&](Vector const& v) { return v.tail(d - 1).lpNorm<1>(); };
    auto objective_at = [&](Vector const& v, Vector& eta_out) -> std::optional<double> {
        try {
            eta_out = linear_predictor(family, X, v);
        } catch (OverflowError const&) {
            return std::nullopt;
        }
        double s = 0.0;
        for (Index i = 0; i < n; ++i)
            s += -y(i) * eta_out(i) + family.b(eta_out(i));
        return s / static_cast<double>(n) + lambda * l1(v);
    };

    Vector eta;
    auto f0 = objective_at(xi, eta);
    if (!f0) {
        // Overflowing warm start: fall back to the null model.
        xi = null_xi ? *null_xi : Vector::Zero(d);
        f0 = objective_at(xi, eta);
        if (!f0) family.check_eta(std::numeric_limits<double>::infinity());
    }
    double F = *f0;
    fit.objective_trace.push_back(F);

    Vector w(n), r(n), v(d), rr(n), eta_t(n);
    FitStatus status = FitStatus::max_outer_iterations;
    int sweeps = 0;
    int outer = 0;
    for (outer = 1; outer <= opt.max_outer; ++outer) {
        for (Index i = 0; i < n; ++i) {
            w(i) = family.variance(eta(i));
            r(i) = y(i) - family.mean(eta(i));
        }
        double const inv_n = 1.0 / static_cast<double>(n);
        for (Index k = 0; k < d; ++k)
            v(k) = (X.col(k).array().square() * w.array()).sum() * inv_n;

        Vector xi_new = xi;
        rr = r;
        int used = detail::weighted_cd(X, w, v, lambda, xi_new, rr, opt, sweeps);
        if (used < 0) {
            sweeps = opt.max_sweeps;
        } else {
            sweeps = used;
        }

        Vector dir = xi_new - xi;
        double step_size = dir.cwiseAbs().maxCoeff();
        if (step_size < opt.outer_tol) {
            auto ft = objective_at(xi_new, eta_t);
            if (ft && *ft <= F) {
                xi = xi_new;
                eta = eta_t;
                F = *ft;
                fit.objective_trace.push_back(F);
            }
            status = FitStatus::converged;
            break;
        }

        // Directional derivative of the penalized objective (upper bound).
        double g_dir = -(X.transpose() * r).dot(dir) * inv_n;
        double descent = g_dir + lambda * (l1(xi_new) - l1(xi));
        double t = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 30; ++halving) {
            Vector trial = xi + t * dir;
            auto ft = objective_at(trial, eta_t);
            if (ft && *ft <= F + 1e-4 * t * std::min(descent, 0.0)) {
                xi = std::move(trial);
                eta = eta_t;
                F = *ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            // Below ~1e-6 the objective change is under its rounding error;
            // the KKT check below decides whether this is a solution.
            status = step_size < 1e-6 ? FitStatus::converged : FitStatus::stalled;
            break;
        }
        fit.objective_trace.push_back(F);
        if (used < 0) {
            status = FitStatus::max_sweeps;
            break;
        }
        if (t * step_size < opt.outer_tol) {
            status = FitStatus::converged;
            break;
        }
    }

    fit.xi_hat = CoefficientVector(xi);
    fit.objective = F;
    fit.iterations = std::min(outer, opt.max_outer);
    fit.kkt_residual = kkt_residual(family, data, xi, lambda);
    if (status == FitStatus::converged && fit.kkt_residual > opt.kkt_tolerance)
        status = FitStatus::kkt_violation;
    fit.status = status;
    fit.converged = status == FitStatus::converged;
    return fit;
}

/// Fits along a decreasing grid, each warm-started from its predecessor.
inline std::vector<LassoFit> fit_path(GlmFamily family, Dataset const& data, Vector const& grid,
                                      SolverOptions const& opt = {}, Index stop_after = -1)
{
    std::vector<LassoFit> path;
    Index last = stop_after < 0 ? grid.size() - 1 : std::min(stop_after, grid.size() - 1);
    path.reserve(static_cast<std::size_t>(last + 1));
    std::optional<CoefficientVector> warm;
    for (Index k = 0; k <= last; ++k) {
        path.push_back(fit_lasso(family, data, grid(k), warm, opt));
        warm = path.back().xi_hat;
    }
    return path;
}

/// Balanced fold labels in [0, folds), a pure function of (n, folds, seed).
inline std::vector<int> fold_assignment(Index n, int folds, std::uint64_t seed)
{
    if (folds < 2) throw InputError("cross-validation needs at least 2 folds");
    if (folds > n) throw InputError("more folds (" + std::to_string(folds) + ") than observations (" +
                                    std::to_string(n) + ")");
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    PhiloxEngine eng(seed, 0xF01D);
    for (Index i = n - 1; i > 0; --i) {
        auto j = static_cast<Index>(eng() % static_cast<std::uint64_t>(i + 1));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    std::vector<int> fold(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i)
        fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = static_cast<int>(i % folds);
    return fold;
}

struct CvResult
{
    Vector lambda_grid;
    Vector cv_mean;
    Vector cv_se;
    double lambda_min = 0.0;
    Index lambda_min_index = 0;
    std::uint64_t fold_assignment_seed = 0;
    int folds_used = 0;
    std::vector<int> skipped_folds;  // folds whose training response had no intercept-only fit
};

/// First index attaining the minimum (largest lambda among ties).
inline Index argmin_first(Vector const& v)
{
    Index best = 0;
    for (Index k = 1; k < v.size(); ++k)
        if (v(k) < v(best)) best = k;
    return best;
}

/**
 * K-fold cross-validation of the held-out deviance (twice the average loss
 * on the held-out fold) over a fixed lambda grid.
 */
inline CvResult cross_validate(GlmFamily family, Dataset const& data, int folds, Vector const& grid,
                               std::uint64_t seed, SolverOptions const& opt = {})
{
    if (grid.size() < 1) throw InputError("lambda grid is empty");
    validate(family, data);
    auto labels = fold_assignment(data.n(), folds, seed);

    CvResult cv;
    cv.lambda_grid = grid;
    cv.fold_assignment_seed = seed;
    std::vector<Vector> fold_dev;

    for (int f = 0; f < folds; ++f) {
        std::vector<Index> train, test;
        for (Index i = 0; i < data.n(); ++i)
            (labels[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
        Dataset tr = data.subset(train);
        try {
            (void)family.intercept_only(tr.y());
        } catch (DegenerateError const&) {
            cv.skipped_folds.push_back(f);
            continue;
        }
        Dataset te = data.subset(test);
        auto path = fit_path(family, tr, grid, opt);
        Vector dev(grid.size());
        for (Index k = 0; k < grid.size(); ++k) {
            Vector eta = linear_predictor(family, te.X(), path[static_cast<std::size_t>(k)].xi_hat.xi());
            double s = 0.0;
            for (Index i = 0; i < te.n(); ++i)
                s += -te.y()(i) * eta(i) + family.b(eta(i));
            dev(k) = 2.0 * s / static_cast<double>(te.n());
        }
        fold_dev.push_back(std::move(dev));
    }

    cv.folds_used = static_cast<int>(fold_dev.size());
    if (cv.folds_used == 0)
        throw DegenerateError("every cross-validation fold has a degenerate training response");

    Index const m = grid.size();
    cv.cv_mean = Vector::Zero(m);
    cv.cv_se = Vector::Zero(m);
    for (auto const& dv : fold_dev)
        cv.cv_mean += dv;
    cv.cv_mean /= static_cast<double>(cv.folds_used);
    if (cv.folds_used > 1) {
        for (auto const& dv : fold_dev)
            cv.cv_se.array() += (dv - cv.cv_mean).array().square();
        cv.cv_se = (cv.cv_se / static_cast<double>(cv.folds_used - 1)).cwiseSqrt() /
                   std::sqrt(static_cast<double>(cv.folds_used));
    }
    cv.lambda_min_index = argmin_first(cv.cv_mean);
    cv.lambda_min = grid(cv.lambda_min_index);
    return cv;
}

/// Fit at the CV-selected lambda, reached by walking the path from the top.
inline LassoFit fit_at_lambda_min(GlmFamily family, Dataset const& data, CvResult const& cv,
                                  SolverOptions const& opt = {})
{
    auto path = fit_path(family, data, cv.lambda_grid, opt, cv.lambda_min_index);
    return path.back();
}

struct MleOptions
{
    int max_iterations = 100;
    double tol = 1e-10;
    double divergence_threshold = 30.0;
    int max_halvings = 30;
};

struct MleFit
{
    CoefficientVector xi_hat;
    bool diverged = false;
    std::optional<Matrix> covariance;  // inverse Hessian / n, absent when diverged
    int iterations = 0;
};

/**
 * Unpenalized maximum likelihood by Newton-Raphson with step halving.
 * Non-existence of the MLE (separation, singular Hessian) is reported
 * through `diverged`, not an exception.
 */
inline MleFit fit_mle(GlmFamily family, Dataset const& data, MleOptions const& opt = {})
{
    Index const d = data.p() + 1;
    if (d > data.n())
        throw DimensionError("MLE needs p + 1 <= n (p + 1 = " + std::to_string(d) +
                             ", n = " + std::to_string(data.n()) + ")");
    validate(family, data);

    MleFit out;
    Vector xi = Vector::Zero(d);
    try {
        xi(0) = family.intercept_only(data.y());
    } catch (DegenerateError const&) {
        xi(0) = 0.0;
    }

    double F = empirical_loss(family, data, xi);
    bool done = false;
    for (int it = 1; it <= opt.max_iterations; ++it) {
        out.iterations = it;
        Vector g = score_vector(family, data, xi);
        Matrix H = hessian_matrix(family, data, xi);
        Eigen::LLT<Matrix> llt(H);
        if (llt.info() != Eigen::Success) {
            out.diverged = true;
            break;
        }
        Vector step = -llt.solve(g);
        if (!step.allFinite()) {
            out.diverged = true;
            break;
        }
        double t = 1.0;
        bool accepted = false;
        Vector trial;
        double Ft = 0.0;
        for (int h = 0; h <= opt.max_halvings; ++h) {
            trial = xi + t * step;
            try {
                Ft = empirical_loss(family, data, trial);
                if (Ft <= F) {
                    accepted = true;
                    break;
                }
            } catch (OverflowError const&) {
            }
            t *= 0.5;
        }
        double change = t * step.cwiseAbs().maxCoeff();
        if (!accepted) {
            if (step.cwiseAbs().maxCoeff() < 1e-6) {
                done = true;
                break;
            }
            out.diverged = true;
            break;
        }
        xi = trial;
        F = Ft;
        if (xi.cwiseAbs().maxCoeff() > opt.divergence_threshold) {
            out.diverged = true;
            break;
        }
        if (change < opt.tol) {
            done = true;
            break;
        }
    }
    if (!done) out.diverged = true;

    out.xi_hat = CoefficientVector(xi);
    if (!out.diverged) {
        Matrix H = hessian_matrix(family, data, xi);
        Eigen::LLT<Matrix> llt(H);
        if (llt.info() != Eigen::Success) {
            out.diverged = true;
        } else {
            Matrix cov = llt.solve(Matrix::Identity(d, d)) / static_cast<double>(data.n());
            out.covariance = 0.5 * (cov + cov.transpose());
        }
    }
    return out;
}

} // namespace dbglm
