#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <utility>

#include "error.hpp"

namespace dbglm {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/**
 * Coefficients (beta0, beta) of a GLM with an intercept.
 *
 * Stored as a single length-(p+1) vector; entry 0 is the intercept and is
 * never penalized.
 */
class CoefficientVector
{
public:
    CoefficientVector() = default;

    explicit CoefficientVector(Vector xi) : xi_(std::move(xi))
    {
        if (xi_.size() < 1)
            throw DimensionError("coefficient vector needs at least an intercept");
    }

    CoefficientVector(double beta0, Vector const& beta) : xi_(beta.size() + 1)
    {
        xi_(0) = beta0;
        xi_.tail(beta.size()) = beta;
    }

    static CoefficientVector zeros(Index p) { return CoefficientVector(Vector::Zero(p + 1)); }

    Index p() const noexcept { return xi_.size() - 1; }
    double beta0() const { return xi_(0); }
    auto beta() const { return xi_.tail(xi_.size() - 1); }
    Vector const& xi() const noexcept { return xi_; }
    Vector& xi() noexcept { return xi_; }
    double operator[](Index j) const { return xi_(j); }

    /// Number of nonzero entries, intercept included.
    Index support_size() const { return (xi_.array() != 0.0).count(); }

private:
    Vector xi_;
};

/**
 * Design matrix with a leading column of ones, and the response.
 */
class Dataset
{
public:
    Dataset() = default;

    Dataset(Matrix X, Vector y) : X_(std::move(X)), y_(std::move(y))
    {
        if (X_.cols() < 1 || X_.rows() < 1)
            throw DimensionError("design matrix must be non-empty");
        if (X_.rows() != y_.size())
            throw DimensionError("design has " + std::to_string(X_.rows()) +
                                 " rows but response has " + std::to_string(y_.size()) +
                                 " entries");
        for (Index i = 0; i < X_.rows(); ++i) {
            if (X_(i, 0) != 1.0)
                throw DimensionError("column 0 of the design must be all ones (row " +
                                     std::to_string(i) + ")");
        }
    }

    Index n() const noexcept { return X_.rows(); }
    Index p() const noexcept { return X_.cols() - 1; }
    Matrix const& X() const noexcept { return X_; }
    Vector const& y() const noexcept { return y_; }

    /// Rows selected by `rows`, in the given order.
    template <class Rows>
    Dataset subset(Rows const& rows) const
    {
        Matrix X(static_cast<Index>(rows.size()), X_.cols());
        Vector y(static_cast<Index>(rows.size()));
        Index r = 0;
        for (auto i : rows) {
            X.row(r) = X_.row(static_cast<Index>(i));
            y(r) = y_(static_cast<Index>(i));
            ++r;
        }
        return Dataset(std::move(X), std::move(y));
    }

    /// Keep the intercept and the listed covariate columns (indices into xi).
    template <class Cols>
    Dataset select_columns(Cols const& cols) const
    {
        Matrix X(X_.rows(), static_cast<Index>(cols.size()));
        Index c = 0;
        for (auto j : cols)
            X.col(c++) = X_.col(static_cast<Index>(j));
        return Dataset(std::move(X), y_);
    }

private:
    Matrix X_;
    Vector y_;
};

} // namespace dbglm
