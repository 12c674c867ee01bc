#include <gtest/gtest.h>

#include <random>

#include <dbglm/theta.hpp>

#include "test_support.hpp"

using namespace dbglm;
using dbglm::testing::random_dataset;

namespace {

Matrix random_spd(Index d, unsigned seed)
{
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> z;
    Matrix B(d, d);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j)
            B(i, j) = z(gen);
    return B * B.transpose() + 0.5 * Matrix::Identity(d, d);
}

// Sylvester-Hadamard matrix; columns are orthogonal with squared norm n.
Matrix hadamard(Index n)
{
    Matrix H = Matrix::Ones(1, 1);
    while (H.rows() < n) {
        Index m = H.rows();
        Matrix K(2 * m, 2 * m);
        K << H, H, H, -H;
        H = K;
    }
    return H;
}

} // namespace

TEST(HessianInverse, SimpleInputs)
{
    auto t = hessian_inverse_theta(Matrix::Identity(3, 3));
    EXPECT_EQ(t.method, ThetaMethod::hessian_inverse);
    EXPECT_LT((t.values - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-15);

    Matrix D = Vector(Eigen::Vector2d(2.0, 4.0)).asDiagonal();
    auto u = hessian_inverse_theta(D);
    EXPECT_DOUBLE_EQ(u.values(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(u.values(1, 1), 0.25);
    EXPECT_EQ(u.values(0, 1), 0.0);
}

TEST(HessianInverse, RandomSpdResidual)
{
    for (unsigned seed = 0; seed < 10; ++seed) {
        Matrix A = random_spd(6, seed);
        auto t = hessian_inverse_theta(A);
        EXPECT_LT((t.values * A - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_EQ((t.values - t.values.transpose()).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(HessianInverse, SingularInputNamesPivot)
{
    // Rank-deficient Gram: more coefficients than rows.
    auto data = random_dataset(GlmFamily::logistic(), 5, 8, 3);
    Matrix H = hessian_matrix(GlmFamily::logistic(), data, Vector::Zero(9));
    try {
        hessian_inverse_theta(H);
        FAIL() << "expected SingularMatrixError";
    } catch (SingularMatrixError const& e) {
        EXPECT_LT(e.smallest_pivot(), 1e-10);
        EXPECT_NE(std::string(e.what()).find("smallest pivot"), std::string::npos);
    }
    Matrix indefinite = Matrix::Identity(2, 2);
    indefinite(1, 1) = -1.0;
    EXPECT_THROW(hessian_inverse_theta(indefinite), SingularMatrixError);
}

TEST(HessianInverse, InvertsEmpiricalHessianToTolerance)
{
    auto fam = GlmFamily::logistic();
    for (unsigned seed = 0; seed < 5; ++seed) {
        auto data = random_dataset(fam, 400, 30, 40 + seed);
        Vector xi = Vector::Zero(31);
        xi(1) = 0.8;
        Matrix H = hessian_matrix(fam, data, xi);
        auto t = hessian_inverse_theta(H);
        EXPECT_LT((t.values * H - Matrix::Identity(31, 31)).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Nodewise, OrthogonalDesignGivesDiagonalTheta)
{
    Matrix X = hadamard(16).leftCols(5);
    Vector y = Vector::LinSpaced(16, -1.0, 1.0);
    Dataset data(X, y);
    auto t = nodewise_theta(GlmFamily::gaussian(), data, CoefficientVector::zeros(4), 7);
    EXPECT_EQ(t.method, ThetaMethod::nodewise_lasso);
    ASSERT_TRUE(t.tau_sq.has_value());
    EXPECT_LT((*t.tau_sq - Vector::Ones(5)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((t.values - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-14);

    NodewiseOptions fixed;
    fixed.fixed_lambda = 0.3;
    auto f = nodewise_theta(GlmFamily::gaussian(), data, CoefficientVector::zeros(4), 7, fixed);
    EXPECT_LT((f.values - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-14);
}

// Single-predictor lasso in closed form: gamma = S(c, lambda) / a.
TEST(Nodewise, TwoColumnsMatchScalarSoftThreshold)
{
    auto fam = GlmFamily::logistic();
    auto data = random_dataset(fam, 50, 1, 19);
    Vector xi(2);
    xi << 0.2, 0.7;
    auto t = nodewise_theta(fam, data, CoefficientVector(xi), 5);
    ASSERT_TRUE(t.node_lambdas.has_value());

    Vector w(50);
    for (Index i = 0; i < 50; ++i)
        w(i) = std::sqrt(fam.variance(data.X().row(i).dot(xi)));
    Matrix Xw = w.asDiagonal() * data.X();
    for (Index j = 0; j < 2; ++j) {
        Index k = 1 - j;
        double lam = (*t.node_lambdas)(j);
        double a = Xw.col(k).squaredNorm() / 50.0;
        double c = Xw.col(k).dot(Xw.col(j)) / 50.0;
        double z = std::abs(c) > lam ? (c > 0 ? c - lam : c + lam) : 0.0;
        double gamma = z / a;
        double tau2 = (Xw.col(j) - gamma * Xw.col(k)).squaredNorm() / 50.0 + lam * std::abs(gamma);
        EXPECT_NEAR(t.values(j, j), 1.0 / tau2, 1e-8);
        EXPECT_NEAR(t.values(j, k), -gamma / tau2, 1e-8);
        EXPECT_NEAR((*t.tau_sq)(j), tau2, 1e-10);
    }
}

TEST(Nodewise, VanishingPenaltyRecoversGramInverse)
{
    auto data = random_dataset(GlmFamily::gaussian(), 80, 6, 23);
    NodewiseOptions opt;
    opt.fixed_lambda = 1e-12;
    auto t = nodewise_theta(GlmFamily::gaussian(), data, CoefficientVector::zeros(6), 1, opt);
    Matrix inv = (data.X().transpose() * data.X() / 80.0).inverse();
    EXPECT_LT((t.values - inv).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Nodewise, DuplicateColumnIsDegenerate)
{
    auto data = random_dataset(GlmFamily::gaussian(), 30, 3, 2);
    Matrix X = data.X();
    X.col(3) = X.col(2);
    Dataset dup(X, data.y());
    NodewiseOptions opt;
    opt.fixed_lambda = 0.0;
    try {
        nodewise_theta(GlmFamily::gaussian(), dup, CoefficientVector::zeros(3), 1, opt);
        FAIL() << "expected DegenerateError";
    } catch (DegenerateError const& e) {
        EXPECT_TRUE(e.index() == 2 || e.index() == 3);
    }
}

TEST(Nodewise, DeterministicAndGenerallyAsymmetric)
{
    auto fam = GlmFamily::logistic();
    Vector truth = Vector::Zero(9);
    truth(1) = 1.0;
    truth(2) = -0.5;
    auto data = random_dataset(fam, 150, 8, 61, &truth);
    auto a = nodewise_theta(fam, data, CoefficientVector(truth), 99);
    auto b = nodewise_theta(fam, data, CoefficientVector(truth), 99);
    EXPECT_EQ((a.values - b.values).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT((a.values - a.values.transpose()).cwiseAbs().maxCoeff(), 0.0);
    for (Index j = 0; j < 9; ++j) {
        EXPECT_GT((*a.tau_sq)(j), 0.0);
        EXPECT_DOUBLE_EQ(a.values(j, j), 1.0 / (*a.tau_sq)(j));
    }
}

// Spectral error of the Hessian inverse shrinks with n, against a Monte
// Carlo estimate of the population inverse information.
TEST(HessianInverse, ConsistentForPopulationInverse)
{
    auto fam = GlmFamily::logistic();
    Index const p = 10;
    Vector truth = Vector::Zero(p + 1);
    truth(1) = 1.0;
    truth(4) = -0.5;
    truth(7) = 0.5;

    std::mt19937_64 gen(2024);
    std::normal_distribution<double> z;
    Matrix pop = Matrix::Zero(p + 1, p + 1);
    Index const draws = 400000;
    Vector x(p + 1);
    x(0) = 1.0;
    for (Index i = 0; i < draws; ++i) {
        for (Index j = 1; j <= p; ++j)
            x(j) = z(gen);
        pop.noalias() += fam.variance(x.dot(truth)) * x * x.transpose();
    }
    pop /= static_cast<double>(draws);
    Matrix theta0 = pop.inverse();

    auto median_error = [&](Index n) {
        std::vector<double> errs;
        double lambda = 0.5 * std::sqrt(std::log(static_cast<double>(p)) / static_cast<double>(n));
        for (unsigned r = 0; r < 20; ++r) {
            auto data = random_dataset(fam, n, p, 7000 + r + static_cast<unsigned>(n), &truth);
            auto fit = fit_lasso(fam, data, lambda);
            auto t = hessian_inverse_theta(hessian_matrix(fam, data, fit.xi_hat));
            Eigen::JacobiSVD<Matrix> svd(t.values - theta0);
            errs.push_back(svd.singularValues()(0));
        }
        return dbglm::testing::median(errs);
    };
    EXPECT_LT(median_error(4000), median_error(500));
}
