#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "family.hpp"
#include "lasso.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace dbglm {

enum class ThetaMethod { nodewise_lasso, hessian_inverse };

inline char const* to_string(ThetaMethod m)
{
    return m == ThetaMethod::nodewise_lasso ? "nodewise_lasso" : "hessian_inverse";
}

/// Estimate of the inverse information matrix.
struct ThetaMatrix
{
    Matrix values;
    ThetaMethod method = ThetaMethod::hessian_inverse;
    std::optional<Vector> tau_sq;        // node-wise residual scales
    std::optional<Vector> node_lambdas;  // node-wise penalties chosen per column
};

/**
 * Inverse of the empirical Hessian via an LDL' factorization. Singular or
 * indefinite input is an error; no ridge is added.
 */
inline ThetaMatrix hessian_inverse_theta(Matrix const& hessian)
{
    Index const d = hessian.rows();
    if (hessian.cols() != d || d == 0)
        throw DimensionError("Hessian must be square and non-empty");
    if ((hessian - hessian.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, hessian.cwiseAbs().maxCoeff()))
        throw InputError("Hessian is not symmetric");

    Eigen::LDLT<Matrix> ldlt(hessian);
    Vector D = ldlt.vectorD();
    double dmin = D.minCoeff();
    double dmax = D.cwiseAbs().maxCoeff();
    double floor = std::numeric_limits<double>::epsilon() * static_cast<double>(d) * dmax;
    if (ldlt.info() != Eigen::Success || !(dmin > floor))
        throw SingularMatrixError("Hessian is singular or indefinite (smallest pivot " + std::to_string(dmin) +
                                      ", dimension " + std::to_string(d) + ")",
                                  dmin);

    Matrix inv = ldlt.solve(Matrix::Identity(d, d));
    ThetaMatrix out;
    out.values = 0.5 * (inv + inv.transpose());
    out.method = ThetaMethod::hessian_inverse;
    return out;
}

struct NodewiseOptions
{
    int folds = 5;
    int n_lambda = 100;
    std::optional<double> lambda_ratio;   // default: 0.01 if n > p, else 0.05
    std::optional<double> fixed_lambda;   // skip CV and use this penalty for every column
    double inner_tol = 1e-10;
    int max_sweeps = 10000;
};

namespace detail {

/**
 * Coordinate descent in covariance form for one node-wise regression:
 *   minimize 1/2 g' A g - c' g + lambda ||g||_1  over g with g_j = 0,
 * where A = G / m and c = G(:, j) / m for a Gram matrix G over m rows.
 * `grad` holds c - A g and is kept current.
 */
class GramLasso
{
public:
    GramLasso(Matrix const& G, double m, Index j) : G_(G), inv_m_(1.0 / m), j_(j)
    {
        Index d = G.rows();
        gamma_ = Vector::Zero(d);
        grad_ = G.col(j) * inv_m_;
        grad_(j) = 0.0;
    }

    double lambda_max() const { return grad_.cwiseAbs().maxCoeff(); }

    void solve(double lambda, double tol, int max_sweeps)
    {
        Index const d = G_.rows();
        auto update = [&](Index k) {
            if (k == j_) return 0.0;
            double a = G_(k, k) * inv_m_;
            if (a <= 0.0) return 0.0;
            double z = grad_(k) + a * gamma_(k);
            double nk = soft_threshold(z, lambda) / a;
            double delta = nk - gamma_(k);
            if (delta != 0.0) {
                gamma_(k) = nk;
                grad_.noalias() -= (delta * inv_m_) * G_.col(k);
                grad_(j_) = 0.0;
            }
            return std::abs(delta);
        };
        int sweeps = 0;
        std::vector<Index> active;
        for (;;) {
            double maxd = 0.0;
            for (Index k = 0; k < d; ++k)
                maxd = std::max(maxd, update(k));
            if (maxd < tol || ++sweeps >= max_sweeps) return;
            active.clear();
            for (Index k = 0; k < d; ++k)
                if (gamma_(k) != 0.0) active.push_back(k);
            for (;;) {
                double m = 0.0;
                for (Index k : active)
                    m = std::max(m, update(k));
                if (m < tol) break;
                if (++sweeps >= max_sweeps) return;
            }
        }
    }

    Vector const& gamma() const { return gamma_; }

private:
    Matrix const& G_;
    double inv_m_;
    Index j_;
    Vector gamma_;
    Vector grad_;
};

/// ||x_j - X_{-j} g||^2 from a Gram matrix, using only the nonzeros of g.
inline double gram_rss(Matrix const& G, Index j, Vector const& gamma)
{
    std::vector<Index> nz;
    for (Index k = 0; k < gamma.size(); ++k)
        if (gamma(k) != 0.0) nz.push_back(k);
    double rss = G(j, j);
    for (Index a : nz) {
        rss -= 2.0 * gamma(a) * G(a, j);
        for (Index b : nz)
            rss += gamma(a) * gamma(b) * G(a, b);
    }
    return rss;
}

} // namespace detail

/**
 * Node-wise lasso estimate of the inverse information matrix.
 *
 * Each column j of the weighted design W X is regressed on the others
 * (squared error, no intercept), with lambda_j chosen by K-fold CV on a
 * column-specific grid. Row j of the result is (1, -gamma_j) / tau_j^2,
 * where tau_j^2 = ||x_j - X_{-j} gamma_j||^2 / n + lambda_j ||gamma_j||_1.
 *
 * All column problems share one fold assignment so that each fold's Gram
 * matrix is formed once.
 */
inline ThetaMatrix nodewise_theta(GlmFamily family, Dataset const& data, CoefficientVector const& xi_hat,
                                  std::uint64_t seed, NodewiseOptions const& opt = {})
{
    Index const n = data.n();
    Index const d = data.p() + 1;
    if (xi_hat.xi().size() != d)
        throw DimensionError("coefficient length does not match the design");

    Matrix Xw = weighted_design(family, data, xi_hat.xi());
    Matrix G = Xw.transpose() * Xw;
    double const ratio = opt.lambda_ratio.value_or(default_lambda_ratio(n, d - 1));

    std::vector<Matrix> train_gram;
    std::vector<Matrix> test_gram;
    std::vector<double> train_n, test_n;
    if (!opt.fixed_lambda) {
        auto labels = fold_assignment(n, opt.folds, seed);
        for (int f = 0; f < opt.folds; ++f) {
            std::vector<Index> rows;
            for (Index i = 0; i < n; ++i)
                if (labels[static_cast<std::size_t>(i)] == f) rows.push_back(i);
            Matrix Xf(static_cast<Index>(rows.size()), d);
            for (std::size_t r = 0; r < rows.size(); ++r)
                Xf.row(static_cast<Index>(r)) = Xw.row(rows[r]);
            Matrix Gf = Xf.transpose() * Xf;
            train_gram.push_back(G - Gf);
            test_gram.push_back(std::move(Gf));
            test_n.push_back(static_cast<double>(rows.size()));
            train_n.push_back(static_cast<double>(n - static_cast<Index>(rows.size())));
        }
    }

    ThetaMatrix out;
    out.method = ThetaMethod::nodewise_lasso;
    out.values = Matrix::Zero(d, d);
    Vector tau_sq(d), lambdas(d);

    for (Index j = 0; j < d; ++j) {
        double lam;
        detail::GramLasso full(G, static_cast<double>(n), j);
        double lmax = full.lambda_max();
        if (opt.fixed_lambda) {
            lam = *opt.fixed_lambda;
            full.solve(lam, opt.inner_tol, opt.max_sweeps);
        } else if (!(lmax > 0.0)) {
            // Column orthogonal to all others: gamma_j = 0 at every lambda.
            lam = 0.0;
        } else {
            Vector grid = log_spaced_grid(lmax, opt.n_lambda, ratio);
            Vector cv = Vector::Zero(grid.size());
            for (std::size_t f = 0; f < train_gram.size(); ++f) {
                detail::GramLasso fold(train_gram[f], train_n[f], j);
                for (Index k = 0; k < grid.size(); ++k) {
                    fold.solve(grid(k), opt.inner_tol, opt.max_sweeps);
                    cv(k) += detail::gram_rss(test_gram[f], j, fold.gamma()) / test_n[f];
                }
            }
            Index best = argmin_first(cv);
            lam = grid(best);
            for (Index k = 0; k <= best; ++k)
                full.solve(grid(k), opt.inner_tol, opt.max_sweeps);
        }

        Vector const& gamma = full.gamma();
        double t2 = detail::gram_rss(G, j, gamma) / static_cast<double>(n) + lam * gamma.lpNorm<1>();
        if (!(t2 > 1e-12))
            throw DegenerateError("node-wise residual scale for column " + std::to_string(j) +
                                      " is not positive (tau^2 = " + std::to_string(t2) + ")",
                                  j);
        tau_sq(j) = t2;
        lambdas(j) = lam;
        out.values.row(j) = -gamma.transpose() / t2;
        out.values(j, j) = 1.0 / t2;
    }
    out.tau_sq = std::move(tau_sq);
    out.node_lambdas = std::move(lambdas);
    return out;
}

} // namespace dbglm
