#include <gtest/gtest.h>

#include <random>

#include <dbglm/simulate.hpp>

#include "test_support.hpp"

using namespace dbglm;

namespace {

Matrix sample_cov(Matrix const& Z)
{
    Matrix C = Z.rowwise() - Z.colwise().mean();
    return C.transpose() * C / static_cast<double>(Z.rows() - 1);
}

SimulationCell small_cell()
{
    SimulationCell c;
    c.n = 200;
    c.p = 10;
    c.beta1_grid = {0.0, 1.0};
    c.extra_signals = {{4, 0.5}, {8, -0.5}};
    c.replications = 3;
    c.seed = 11;
    c.n_lambda = 30;
    return c;
}

void expect_same(ReplicationRecord const& a, ReplicationRecord const& b)
{
    EXPECT_EQ(a.grid_index, b.grid_index);
    EXPECT_EQ(a.replication, b.replication);
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.method, b.method);
    EXPECT_EQ(a.status, b.status);
    EXPECT_EQ(a.note, b.note);
    auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    EXPECT_TRUE(same(a.lambda, b.lambda));
    EXPECT_TRUE(same(a.estimate, b.estimate));
    EXPECT_TRUE(same(a.se, b.se));
    EXPECT_TRUE(same(a.ci_lower, b.ci_lower));
    EXPECT_TRUE(same(a.ci_upper, b.ci_upper));
    EXPECT_EQ(a.covered, b.covered);
}

} // namespace

TEST(Covariates, IdentityMoments)
{
    Matrix X = gen_covariates(100000, 3, {}, 6.0, 5);
    EXPECT_TRUE((X.col(0).array() == 1.0).all());
    Matrix S = sample_cov(X.rightCols(3));
    EXPECT_LT((S - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.02);
}

TEST(Covariates, Ar1Correlation)
{
    CovarianceSpec cov{CovarianceSpec::Kind::ar1, 0.7};
    Matrix X = gen_covariates(100000, 3, cov, 6.0, 6);
    Matrix S = sample_cov(X.rightCols(3));
    double corr13 = S(0, 2) / std::sqrt(S(0, 0) * S(2, 2));
    EXPECT_NEAR(corr13, 0.49, 0.02);
    EXPECT_NEAR(S(0, 1) / std::sqrt(S(0, 0) * S(1, 1)), 0.7, 0.02);
}

TEST(Covariates, TruncationByRowRejection)
{
    Matrix X = gen_covariates(20000, 5, {}, 6.0, 7);
    EXPECT_LE(X.rightCols(5).cwiseAbs().maxCoeff(), 6.0);
    Matrix Y = gen_covariates(20000, 5, {}, 0.5, 7);
    EXPECT_LE(Y.rightCols(5).cwiseAbs().maxCoeff(), 0.5);
    EXPECT_GT(Y.rightCols(5).cwiseAbs().maxCoeff(), 0.49);
}

TEST(Covariates, DeterministicAndSeedSensitive)
{
    CovarianceSpec cov{CovarianceSpec::Kind::compound_symmetry, 0.3};
    Matrix a = gen_covariates(50, 4, cov, 6.0, 1);
    Matrix b = gen_covariates(50, 4, cov, 6.0, 1);
    Matrix c = gen_covariates(50, 4, cov, 6.0, 2);
    EXPECT_EQ((a - b).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT((a - c).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Covariates, RejectsBadCorrelation)
{
    EXPECT_THROW(gen_covariates(10, 3, {CovarianceSpec::Kind::ar1, 1.0}, 6.0, 1), InputError);
    EXPECT_THROW(gen_covariates(10, 3, {CovarianceSpec::Kind::compound_symmetry, -0.1}, 6.0, 1), InputError);
    EXPECT_THROW(gen_covariates(10, 3, {}, 0.0, 1), InputError);
}

TEST(Response, NullMeans)
{
    Matrix X = gen_covariates(100000, 2, {}, 6.0, 3);
    Vector xi = Vector::Zero(3);
    EXPECT_NEAR(gen_response(GlmFamily::logistic(), X, xi, 4).mean(), 0.5, 0.01);
    EXPECT_NEAR(gen_response(GlmFamily::poisson(), X, xi, 4).mean(), 1.0, 0.02);
    Vector g = gen_response(GlmFamily::gaussian(), X, xi, 4);
    EXPECT_NEAR(g.mean(), 0.0, 0.02);
    EXPECT_NEAR(g.squaredNorm() / 100000.0, 1.0, 0.02);
}

TEST(Response, MonotoneLink)
{
    Matrix X = gen_covariates(100000, 2, {}, 6.0, 8);
    Vector xi = Vector::Zero(3);
    xi(1) = 1.0;
    Vector y = gen_response(GlmFamily::logistic(), X, xi, 9);
    double hi = 0.0, lo = 0.0;
    int nh = 0, nl = 0;
    for (Index i = 0; i < X.rows(); ++i) {
        if (X(i, 1) > 1.0) { hi += y(i); ++nh; }
        if (X(i, 1) < -1.0) { lo += y(i); ++nl; }
    }
    EXPECT_GT(hi / nh, lo / nl);
}

TEST(Response, PoissonOverflowIsError)
{
    Matrix X = Matrix::Ones(3, 1);
    Vector xi = Vector::Constant(1, 800.0);
    EXPECT_THROW(gen_response(GlmFamily::poisson(), X, xi, 1), OverflowError);
    EXPECT_THROW(gen_response(GlmFamily::logistic(), X, Vector::Zero(2), 1), DimensionError);
}

TEST(PoissonClosedForm, NullModel)
{
    auto info = poisson_closed_form(0.0, Vector::Zero(3), Matrix::Identity(3, 3));
    EXPECT_LT((info.sigma - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((info.theta - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PoissonClosedForm, SinglePredictor)
{
    double b = 0.7;
    auto info = poisson_closed_form(0.0, Vector::Constant(1, b), Matrix::Identity(1, 1));
    double s = std::exp(b * b / 2.0);
    EXPECT_NEAR(info.sigma(0, 0), s, 1e-14);
    EXPECT_NEAR(info.sigma(0, 1), s * b, 1e-14);
    EXPECT_NEAR(info.sigma(1, 1), s * (1.0 + b * b), 1e-14);
    EXPECT_LT((info.sigma * info.theta - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PoissonClosedForm, InverseAcrossRandomInputs)
{
    std::mt19937_64 gen(77);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 50; ++rep) {
        Index p = 1 + rep % 5;
        Matrix B(p, p);
        for (Index i = 0; i < p; ++i)
            for (Index j = 0; j < p; ++j)
                B(i, j) = 0.5 * z(gen);
        Matrix Sx = B * B.transpose() + Matrix::Identity(p, p);
        Vector beta(p);
        for (Index j = 0; j < p; ++j)
            beta(j) = 0.3 * z(gen);
        auto info = poisson_closed_form(0.2 * z(gen), beta, Sx);
        Index d = p + 1;
        EXPECT_LT((info.sigma * info.theta - Matrix::Identity(d, d)).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(PoissonClosedForm, MatchesMonteCarloInformation)
{
    Index const p = 3;
    Matrix Sx(3, 3);
    Sx << 1.0, 0.3, 0.2, 0.3, 1.2, 0.25, 0.2, 0.25, 0.9;
    Vector beta(3);
    beta << 0.2, 0.3, 0.4;
    double beta0 = 0.1;
    auto info = poisson_closed_form(beta0, beta, Sx);

    Eigen::LLT<Matrix> llt(Sx);
    Matrix L = llt.matrixL();
    std::mt19937_64 gen(31337);
    std::normal_distribution<double> z;
    Matrix mc = Matrix::Zero(p + 1, p + 1);
    Vector u(p), x(p + 1);
    x(0) = 1.0;
    Index const draws = 1000000;
    for (Index i = 0; i < draws; ++i) {
        for (Index k = 0; k < p; ++k)
            u(k) = z(gen);
        x.tail(p) = L * u;
        mc.noalias() += std::exp(beta0 + x.tail(p).dot(beta)) * x * x.transpose();
    }
    mc /= static_cast<double>(draws);
    Matrix rel = (mc - info.sigma).cwiseQuotient(info.sigma).cwiseAbs();
    EXPECT_LT(rel.maxCoeff(), 0.01) << rel;
}

TEST(PoissonClosedForm, Errors)
{
    EXPECT_THROW(poisson_closed_form(0.0, Vector::Zero(2), Matrix::Identity(3, 3)), DimensionError);
    Matrix bad = Matrix::Identity(2, 2);
    bad(1, 1) = -1.0;
    EXPECT_THROW(poisson_closed_form(0.0, Vector::Zero(2), bad), InputError);
}

TEST(Signals, DefaultPositions)
{
    auto s = default_extra_signals(40, {0.5, 0.5, 1.0, 1.0});
    ASSERT_EQ(s.size(), 4u);
    EXPECT_EQ(s[0].index, 8);
    EXPECT_EQ(s[1].index, 16);
    EXPECT_EQ(s[2].index, 24);
    EXPECT_EQ(s[3].index, 32);
    EXPECT_EQ(s[2].value, 1.0);

    auto t = default_extra_signals(3, {1.0, 1.0});
    EXPECT_EQ(t[0].index, 2);
    EXPECT_EQ(t[1].index, 3);
    EXPECT_THROW(default_extra_signals(2, {1.0, 1.0}), InputError);
}

TEST(Cell, ValidationAndTruth)
{
    auto c = small_cell();
    EXPECT_NO_THROW(c.validate());
    Vector xi = c.xi_true(1.5);
    EXPECT_EQ(xi.size(), 11);
    EXPECT_EQ(xi(1), 1.5);
    EXPECT_EQ(xi(4), 0.5);
    EXPECT_EQ(xi(8), -0.5);
    EXPECT_EQ(xi.cwiseAbs().sum(), 2.5);

    auto bad = c;
    bad.extra_signals = {{11, 1.0}};
    EXPECT_THROW(bad.validate(), InputError);
    bad = c;
    bad.extra_signals = {{1, 1.0}};
    EXPECT_THROW(bad.validate(), InputError);
    bad = c;
    bad.replications = 0;
    EXPECT_THROW(bad.validate(), InputError);
    bad = c;
    bad.cov.rho = 1.0;
    EXPECT_THROW(bad.validate(), InputError);
}

TEST(Oracle, SupportAndPadding)
{
    Vector xi = Vector::Zero(6);
    xi(3) = 2.0;
    auto s = oracle_support(xi);
    EXPECT_EQ(s, (std::vector<Index>{0, 1, 3}));

    auto fam = GlmFamily::logistic();
    auto data = dbglm::testing::random_dataset(fam, 300, 5, 12, &xi);
    auto full = oracle_fit(fam, data, xi);
    auto reduced = fit_mle(fam, data.select_columns(s));
    ASSERT_FALSE(full.diverged);
    for (std::size_t k = 0; k < s.size(); ++k)
        EXPECT_EQ(full.xi_hat[s[k]], reduced.xi_hat[static_cast<Index>(k)]);
    EXPECT_EQ(full.xi_hat[2], 0.0);
    EXPECT_EQ(full.xi_hat[4], 0.0);
    EXPECT_EQ(full.xi_hat[5], 0.0);
    EXPECT_EQ((*full.covariance)(2, 2), 0.0);
    EXPECT_EQ((*full.covariance)(3, 3), (*reduced.covariance)(2, 2));
}

TEST(RunCell, DeterministicAcrossRunsAndThreads)
{
    auto c = small_cell();
    c.audit = true;
    auto a = run_cell(c);
    auto b = run_cell(c);
    c.threads = 4;
    auto t = run_cell(c);
    ASSERT_EQ(a.size(), 2u * 3u * 4u);
    ASSERT_EQ(a.size(), b.size());
    ASSERT_EQ(a.size(), t.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        expect_same(a[i], b[i]);
        expect_same(a[i], t[i]);
    }
    // Ordered by grid point, then replication, then method.
    EXPECT_EQ(a[0].method, Method::ref_ds);
    EXPECT_EQ(a[1].method, Method::orig_ds);
    EXPECT_EQ(a[4].replication, 1);
    EXPECT_EQ(a[12].grid_index, 1);
    EXPECT_EQ(a[12].beta1, 1.0);
    EXPECT_NE(a[0].seed, a[4].seed);
}

TEST(RunCell, AuditIdentityHoldsPerReplication)
{
    auto c = small_cell();
    c.audit = true;
    c.methods = {Method::ref_ds, Method::orig_ds};
    for (auto const& r : run_cell(c)) {
        ASSERT_EQ(r.status, RecordStatus::ok) << r.note;
        ASSERT_TRUE(r.audit.has_value());
        EXPECT_LE(r.audit->identity_error, 1e-8);
        if (r.method == Method::ref_ds) EXPECT_LE(std::abs(r.audit->term_III), 1e-8);
    }
}

TEST(RunCell, GaussianRefEqualsLeastSquares)
{
    auto c = small_cell();
    c.family = GlmFamily::gaussian();
    c.methods = {Method::ref_ds, Method::mle};
    auto recs = run_cell(c);
    for (std::size_t i = 0; i < recs.size(); i += 2) {
        auto const& ref = recs[i];
        auto const& mle = recs[i + 1];
        ASSERT_EQ(ref.status, RecordStatus::ok);
        Vector xi0 = c.xi_true(ref.beta1);
        auto data = simulate_dataset(c, xi0, ref.seed);
        Vector ols = data.X().colPivHouseholderQr().solve(data.y());
        EXPECT_NEAR(ref.estimate, ols(1), 1e-8);
        EXPECT_NEAR(mle.estimate, ols(1), 1e-6);
    }
}

TEST(RunCell, WideDesignRecordsFailuresInsteadOfThrowing)
{
    SimulationCell c;
    c.n = 40;
    c.p = 60;
    c.beta1_grid = {1.0};
    c.extra_signals = default_extra_signals(60, {1.0});
    c.replications = 1;
    c.n_lambda = 20;
    auto recs = run_cell(c);
    ASSERT_EQ(recs.size(), 4u);
    EXPECT_EQ(recs[0].method, Method::ref_ds);
    EXPECT_EQ(recs[0].status, RecordStatus::failed);
    EXPECT_NE(recs[0].note.find("singular"), std::string::npos);
    EXPECT_FALSE(std::isnan(recs[0].lambda));
    EXPECT_EQ(recs[1].status, RecordStatus::ok);
    EXPECT_EQ(recs[2].status, RecordStatus::failed);
    EXPECT_EQ(recs[3].status, RecordStatus::ok);

    auto s = summarize(recs);
    auto ref = s.find(Method::ref_ds, 1.0);
    ASSERT_TRUE(ref.has_value());
    EXPECT_FALSE(ref->present());
    EXPECT_EQ(ref->divergence_rate, 1.0);
    EXPECT_TRUE(std::isnan(ref->coverage));
}

TEST(RunCell, ProgressReported)
{
    auto c = small_cell();
    c.methods = {Method::mle};
    std::size_t calls = 0, last = 0;
    run_cell(c, [&](std::size_t done, std::size_t total) {
        ++calls;
        last = done;
        EXPECT_EQ(total, 6u);
    });
    EXPECT_EQ(calls, 6u);
    EXPECT_EQ(last, 6u);
}

TEST(Summarize, SingleCoveredRecord)
{
    ReplicationRecord r;
    r.beta1 = 0.7;
    r.estimate = 0.7;
    r.se = 0.1;
    r.ci_lower = 0.5;
    r.ci_upper = 0.9;
    r.covered = true;
    auto s = summarize({r});
    ASSERT_EQ(s.rows.size(), 1u);
    EXPECT_EQ(s.rows[0].bias, 0.0);
    EXPECT_EQ(s.rows[0].coverage, 1.0);
    EXPECT_EQ(s.rows[0].empirical_se, 0.0);
    EXPECT_EQ(s.rows[0].model_se, 0.1);
    EXPECT_EQ(s.rows[0].divergence_rate, 0.0);
}

TEST(Summarize, SymmetricPairAndExclusions)
{
    double const beta1 = 1.0, d = 0.25;
    std::vector<ReplicationRecord> recs(4);
    for (auto& r : recs) {
        r.method = Method::mle;
        r.beta1 = beta1;
        r.se = 0.2;
    }
    recs[0].estimate = beta1 - d;
    recs[0].covered = true;
    recs[1].estimate = beta1 + d;
    recs[2].status = RecordStatus::diverged;
    recs[2].estimate = 100.0;
    recs[3].status = RecordStatus::failed;
    auto s = summarize(recs);
    auto row = s.find(Method::mle, beta1);
    ASSERT_TRUE(row.has_value());
    EXPECT_NEAR(row->bias, 0.0, 1e-15);
    EXPECT_NEAR(row->empirical_se, d * std::sqrt(2.0), 1e-15);
    EXPECT_EQ(row->coverage, 0.5);
    EXPECT_EQ(row->used, 2);
    EXPECT_EQ(row->total, 4);
    EXPECT_EQ(row->divergence_rate, 0.5);
    EXPECT_FALSE(s.find(Method::ref_ds, beta1).has_value());
}

TEST(Summarize, RowPerMethodAndGridPoint)
{
    auto c = small_cell();
    c.methods = {Method::mle, Method::oracle};
    auto s = summarize(run_cell(c));
    ASSERT_EQ(s.rows.size(), 4u);
    EXPECT_EQ(s.rows[0].method, Method::mle);
    EXPECT_EQ(s.rows[0].beta1, 0.0);
    EXPECT_EQ(s.rows[1].beta1, 1.0);
    EXPECT_EQ(s.rows[2].method, Method::oracle);
    for (auto const& r : s.rows) {
        EXPECT_GE(r.coverage, 0.0);
        EXPECT_LE(r.coverage, 1.0);
        EXPECT_GE(r.empirical_se, 0.0);
        EXPECT_EQ(r.total, 3);
    }
}
