#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "debias.hpp"
#include "error.hpp"
#include "family.hpp"
#include "lasso.hpp"
#include "rng.hpp"
#include "theta.hpp"
#include "types.hpp"

namespace dbglm {

struct CovarianceSpec
{
    enum class Kind { identity, ar1, compound_symmetry };
    Kind kind = Kind::identity;
    double rho = 0.0;

    static std::optional<Kind> parse_kind(std::string_view s)
    {
        if (s == "identity") return Kind::identity;
        if (s == "ar1") return Kind::ar1;
        if (s == "compound_symmetry" || s == "cs") return Kind::compound_symmetry;
        return std::nullopt;
    }

    std::string_view kind_name() const
    {
        switch (kind) {
        case Kind::identity: return "identity";
        case Kind::ar1: return "ar1";
        case Kind::compound_symmetry: return "compound_symmetry";
        }
        return "unknown";
    }

    Matrix matrix(Index p) const
    {
        if (kind != Kind::identity && !(rho >= 0.0 && rho < 1.0))
            throw InputError("covariance correlation must lie in [0, 1) to be positive definite (got " +
                             std::to_string(rho) + ")");
        Matrix S = Matrix::Identity(p, p);
        if (kind == Kind::identity) return S;
        for (Index i = 0; i < p; ++i)
            for (Index j = 0; j < p; ++j)
                if (i != j)
                    S(i, j) = kind == Kind::ar1 ? std::pow(rho, static_cast<double>(std::abs(i - j))) : rho;
        return S;
    }
};

/**
 * n x (p+1) design with a leading intercept column. Rows are N_p(0, Sigma_x)
 * draws; a row with any component outside [-truncation, truncation] is
 * redrawn in full.
 */
inline Matrix gen_covariates(Index n, Index p, CovarianceSpec const& cov, double truncation, std::uint64_t seed)
{
    if (!(truncation > 0.0)) throw InputError("truncation bound must be positive");
    Matrix S = cov.matrix(p);
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) throw InputError("covariate covariance is not positive definite");
    Matrix L = llt.matrixL();
    bool const identity = cov.kind == CovarianceSpec::Kind::identity || cov.rho == 0.0;

    PhiloxEngine eng(seed, 1);
    std::normal_distribution<double> normal;
    Matrix X(n, p + 1);
    X.col(0).setOnes();
    Vector z(p), x(p);
    for (Index i = 0; i < n; ++i) {
        for (;;) {
            for (Index k = 0; k < p; ++k)
                z(k) = normal(eng);
            if (identity)
                x = z;
            else
                x.noalias() = L.triangularView<Eigen::Lower>() * z;
            if (p == 0 || x.cwiseAbs().maxCoeff() <= truncation) break;
        }
        X.row(i).tail(p) = x.transpose();
    }
    return X;
}

inline Vector gen_response(GlmFamily family, Matrix const& X, Vector const& xi_true, std::uint64_t seed)
{
    if (xi_true.size() != X.cols())
        throw DimensionError("true coefficient length does not match the design");
    Vector eta = linear_predictor(family, X, xi_true);
    PhiloxEngine eng(seed, 2);
    Vector y(X.rows());
    std::normal_distribution<double> normal;
    for (Index i = 0; i < X.rows(); ++i) {
        switch (family.kind) {
        case FamilyKind::gaussian: y(i) = eta(i) + normal(eng); break;
        case FamilyKind::logistic: y(i) = eng.uniform() < family.mean(eta(i)) ? 1.0 : 0.0; break;
        case FamilyKind::poisson: {
            std::poisson_distribution<long long> pd(family.mean(eta(i)));
            y(i) = static_cast<double>(pd(eng));
            break;
        }
        }
    }
    return y;
}

struct PoissonInformation
{
    Matrix sigma;  // population information matrix
    Matrix theta;  // its inverse
};

/**
 * Closed-form information matrix and inverse for Poisson regression with
 * N_p(0, Sigma_x) covariates:
 *   Sigma = e^{b0 + b'Sx b / 2} [[1, a'], [a, A]],  a = Sx b,  A = Sx + a a',
 *   Theta = e^{-(b0 + b'Sx b / 2)} [[1/c, -a'A^{-1}/c], [-A^{-1}a/c, A^{-1} + A^{-1}a a'A^{-1}/c]],
 *   c = 1 - b'(Sx^{-1} + b b')^{-1} b.
 */
inline PoissonInformation poisson_closed_form(double beta0, Vector const& beta, Matrix const& sigma_x)
{
    Index p = beta.size();
    if (sigma_x.rows() != p || sigma_x.cols() != p)
        throw DimensionError("Sigma_x must be p x p");
    Eigen::LLT<Matrix> sx(sigma_x);
    if (sx.info() != Eigen::Success) throw InputError("Sigma_x is not positive definite");

    Vector a = sigma_x * beta;
    Matrix A = sigma_x + a * a.transpose();
    double scale = std::exp(beta0 + 0.5 * beta.dot(a));

    Matrix sx_inv = sx.solve(Matrix::Identity(p, p));
    Matrix M = sx_inv + beta * beta.transpose();
    double c = 1.0 - beta.dot(M.ldlt().solve(beta));
    if (!(c > 1e-12)) throw DegenerateError("Schur complement c = " + std::to_string(c) + " is not positive");

    PoissonInformation out;
    out.sigma.resize(p + 1, p + 1);
    out.sigma(0, 0) = 1.0;
    out.sigma.block(0, 1, 1, p) = a.transpose();
    out.sigma.block(1, 0, p, 1) = a;
    out.sigma.block(1, 1, p, p) = A;
    out.sigma *= scale;

    Eigen::LLT<Matrix> A_llt(A);
    Vector Ainv_a = A_llt.solve(a);
    Matrix A_inv = A_llt.solve(Matrix::Identity(p, p));
    out.theta.resize(p + 1, p + 1);
    out.theta(0, 0) = 1.0 / c;
    out.theta.block(0, 1, 1, p) = -Ainv_a.transpose() / c;
    out.theta.block(1, 0, p, 1) = -Ainv_a / c;
    out.theta.block(1, 1, p, p) = A_inv + Ainv_a * Ainv_a.transpose() / c;
    out.theta /= scale;
    return out;
}

enum class Method { ref_ds, orig_ds, mle, oracle };

inline char const* to_string(Method m)
{
    switch (m) {
    case Method::ref_ds: return "ref_ds";
    case Method::orig_ds: return "orig_ds";
    case Method::mle: return "mle";
    case Method::oracle: return "oracle";
    }
    return "unknown";
}

inline std::optional<Method> parse_method(std::string_view s)
{
    if (s == "ref_ds") return Method::ref_ds;
    if (s == "orig_ds") return Method::orig_ds;
    if (s == "mle") return Method::mle;
    if (s == "oracle") return Method::oracle;
    return std::nullopt;
}

struct Signal
{
    Index index = 0;
    double value = 0.0;
};

/// Positions floor(k p / (m + 1)), k = 1..m, moved off index 1 and off each other.
inline std::vector<Signal> default_extra_signals(Index p, std::vector<double> const& values)
{
    std::vector<Signal> out;
    std::set<Index> used{1};
    Index m = static_cast<Index>(values.size());
    for (Index k = 1; k <= m; ++k) {
        Index j = std::max<Index>(2, (k * p) / (m + 1));
        while (used.count(j)) ++j;
        if (j > p) throw InputError("too many extra signals for p = " + std::to_string(p));
        used.insert(j);
        out.push_back({j, values[static_cast<std::size_t>(k - 1)]});
    }
    return out;
}

/// One experimental configuration. The coefficient under study is beta_1.
struct SimulationCell
{
    GlmFamily family = GlmFamily::logistic();
    Index n = 1000;
    Index p = 40;
    CovarianceSpec cov{CovarianceSpec::Kind::ar1, 0.7};
    double beta0 = 0.0;
    std::vector<double> beta1_grid{0.0, 0.5, 1.0, 1.5};
    std::vector<Signal> extra_signals;
    int replications = 200;
    std::uint64_t seed = 1;
    std::vector<Method> methods{Method::ref_ds, Method::orig_ds, Method::mle, Method::oracle};
    double truncation = 6.0;
    bool audit = false;
    double level = 0.95;
    int cv_folds = 10;
    int nodewise_folds = 5;
    int n_lambda = 100;
    std::optional<double> lambda_ratio;
    int threads = 1;

    void validate() const
    {
        if (n < 2 || p < 1) throw InputError("simulation needs n >= 2 and p >= 1");
        if (replications < 1) throw InputError("replications must be at least 1");
        if (beta1_grid.empty()) throw InputError("beta1 grid is empty");
        if (methods.empty()) throw InputError("no methods selected");
        if (!(level > 0.0 && level < 1.0)) throw InputError("level must lie in (0, 1)");
        if (!(truncation > 0.0)) throw InputError("truncation must be positive");
        if (threads < 1) throw InputError("threads must be at least 1");
        for (auto const& s : extra_signals)
            if (s.index < 2 || s.index > p)
                throw InputError("extra signal index " + std::to_string(s.index) + " outside [2, p]");
        (void)cov.matrix(1);
    }

    Vector xi_true(double beta1) const
    {
        Vector xi = Vector::Zero(p + 1);
        xi(0) = beta0;
        xi(1) = beta1;
        for (auto const& s : extra_signals)
            xi(s.index) = s.value;
        return xi;
    }
};

enum class RecordStatus { ok, diverged, failed };

inline char const* to_string(RecordStatus s)
{
    switch (s) {
    case RecordStatus::ok: return "ok";
    case RecordStatus::diverged: return "diverged";
    case RecordStatus::failed: return "failed";
    }
    return "unknown";
}

struct AuditTerms
{
    double term_I = 0.0;
    double term_II = 0.0;
    double term_III = 0.0;
    double identity_error = 0.0;
};

/// Result for one (beta1 grid point, replication, method).
struct ReplicationRecord
{
    Index grid_index = 0;
    double beta1 = 0.0;
    int replication = 0;
    std::uint64_t seed = 0;
    Method method = Method::ref_ds;
    RecordStatus status = RecordStatus::ok;
    std::string note;
    double lambda = std::nan("");
    double estimate = std::nan("");
    double se = std::nan("");
    double ci_lower = std::nan("");
    double ci_upper = std::nan("");
    bool covered = false;
    std::optional<AuditTerms> audit;
};

inline std::uint64_t replication_seed(std::uint64_t cell_seed, Index grid_index, int replication)
{
    return derive_seed(derive_seed(cell_seed, static_cast<std::uint64_t>(grid_index)),
                       static_cast<std::uint64_t>(replication));
}

/// Intercept, the target beta_1, and every nonzero true coefficient.
inline std::vector<Index> oracle_support(Vector const& xi_true)
{
    std::vector<Index> s{0, 1};
    for (Index j = 2; j < xi_true.size(); ++j)
        if (xi_true(j) != 0.0) s.push_back(j);
    return s;
}

/// MLE refit on the oracle support, padded with zeros off the support.
inline MleFit oracle_fit(GlmFamily family, Dataset const& data, Vector const& xi_true)
{
    auto support = oracle_support(xi_true);
    MleFit reduced = fit_mle(family, data.select_columns(support));
    MleFit out;
    out.diverged = reduced.diverged;
    out.iterations = reduced.iterations;
    Vector xi = Vector::Zero(data.p() + 1);
    for (std::size_t k = 0; k < support.size(); ++k)
        xi(support[k]) = reduced.xi_hat[static_cast<Index>(k)];
    out.xi_hat = CoefficientVector(xi);
    if (reduced.covariance) {
        Index d = data.p() + 1;
        Matrix cov = Matrix::Zero(d, d);
        for (std::size_t a = 0; a < support.size(); ++a)
            for (std::size_t b = 0; b < support.size(); ++b)
                cov(support[a], support[b]) = (*reduced.covariance)(static_cast<Index>(a), static_cast<Index>(b));
        out.covariance = std::move(cov);
    }
    return out;
}

inline Dataset simulate_dataset(SimulationCell const& cell, Vector const& xi_true, std::uint64_t rep_seed)
{
    Matrix X = gen_covariates(cell.n, cell.p, cell.cov, cell.truncation, derive_seed(rep_seed, 0));
    Vector y = gen_response(cell.family, X, xi_true, derive_seed(rep_seed, 1));
    return Dataset(std::move(X), std::move(y));
}

/// All methods for one replication, in `cell.methods` order.
inline std::vector<ReplicationRecord> run_replication(SimulationCell const& cell, Index grid_index, int replication)
{
    constexpr Index target = 1;
    double const beta1 = cell.beta1_grid[static_cast<std::size_t>(grid_index)];
    std::uint64_t const rep_seed = replication_seed(cell.seed, grid_index, replication);
    Vector const xi0 = cell.xi_true(beta1);
    Dataset const data = simulate_dataset(cell, xi0, rep_seed);

    auto base = [&](Method m) {
        ReplicationRecord r;
        r.grid_index = grid_index;
        r.beta1 = beta1;
        r.replication = replication;
        r.seed = rep_seed;
        r.method = m;
        return r;
    };
    auto fill_ci = [&](ReplicationRecord& r, double est, double se) {
        auto ci = make_interval(est, se, cell.level);
        r.estimate = est;
        r.se = se;
        r.ci_lower = ci.lower;
        r.ci_upper = ci.upper;
        r.covered = ci.contains(beta1);
    };

    bool const needs_lasso = std::any_of(cell.methods.begin(), cell.methods.end(), [](Method m) {
        return m == Method::ref_ds || m == Method::orig_ds;
    });
    std::optional<LassoFit> lasso;
    std::string lasso_error;
    if (needs_lasso) {
        try {
            double ratio = cell.lambda_ratio.value_or(default_lambda_ratio(cell.n, cell.p));
            Vector grid = lambda_grid(cell.family, data, cell.n_lambda, ratio);
            auto cv = cross_validate(cell.family, data, cell.cv_folds, grid, derive_seed(rep_seed, 2));
            lasso = fit_at_lambda_min(cell.family, data, cv);
        } catch (NumericalError const& e) {
            lasso_error = e.what();
        }
    }

    std::vector<ReplicationRecord> out;
    for (Method m : cell.methods) {
        auto rec = base(m);
        try {
            switch (m) {
            case Method::ref_ds:
            case Method::orig_ds: {
                if (!lasso) {
                    rec.status = RecordStatus::failed;
                    rec.note = "lasso: " + lasso_error;
                    break;
                }
                rec.lambda = lasso->lambda;
                ThetaMatrix theta;
                if (m == Method::ref_ds) {
                    theta = hessian_inverse_theta(hessian_matrix(cell.family, data, lasso->xi_hat));
                } else {
                    NodewiseOptions opt;
                    opt.folds = cell.nodewise_folds;
                    opt.n_lambda = cell.n_lambda;
                    opt.lambda_ratio = cell.lambda_ratio;
                    theta = nodewise_theta(cell.family, data, lasso->xi_hat, derive_seed(rep_seed, 3), opt);
                }
                auto est = debias(*lasso, theta, cell.family, data);
                fill_ci(rec, est.b(target), est.se(target));
                if (cell.audit) {
                    auto a = decomposition_audit(*lasso, theta, cell.family, data, CoefficientVector(xi0));
                    rec.audit = AuditTerms{a.term_I(target), a.term_II(target), a.term_III(target),
                                           a.residual_identity_error};
                }
                break;
            }
            case Method::mle:
            case Method::oracle: {
                Index width = m == Method::mle ? cell.p + 1 : static_cast<Index>(oracle_support(xi0).size());
                if (width > cell.n) {
                    rec.status = RecordStatus::failed;
                    rec.note = "p + 1 > n";
                    break;
                }
                MleFit fit = m == Method::mle ? fit_mle(cell.family, data) : oracle_fit(cell.family, data, xi0);
                if (fit.diverged) {
                    rec.status = RecordStatus::diverged;
                    rec.note = "mle diverged";
                    break;
                }
                fill_ci(rec, fit.xi_hat[target], std::sqrt((*fit.covariance)(target, target)));
                break;
            }
            }
        } catch (NumericalError const& e) {
            rec = base(m);
            rec.status = RecordStatus::failed;
            rec.note = e.what();
            if (lasso) rec.lambda = lasso->lambda;
        }
        out.push_back(std::move(rec));
    }
    return out;
}

/**
 * Every replication of every grid point. Output order is (grid point,
 * replication, method) regardless of `cell.threads`.
 */
inline std::vector<ReplicationRecord> run_cell(SimulationCell const& cell,
                                               std::function<void(std::size_t, std::size_t)> const& progress = {})
{
    cell.validate();
    std::size_t const reps = static_cast<std::size_t>(cell.replications);
    std::size_t const tasks = cell.beta1_grid.size() * reps;
    std::vector<std::vector<ReplicationRecord>> results(tasks);

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex progress_mutex;
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        for (;;) {
            std::size_t t = next.fetch_add(1);
            if (t >= tasks) return;
            try {
                results[t] = run_replication(cell, static_cast<Index>(t / reps), static_cast<int>(t % reps));
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(tasks);
                return;
            }
            std::size_t d = ++done;
            if (progress) {
                std::lock_guard lock(progress_mutex);
                progress(d, tasks);
            }
        }
    };

    int nthreads = std::min<int>(cell.threads, static_cast<int>(tasks));
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < nthreads; ++i)
            pool.emplace_back(worker);
        for (auto& th : pool)
            th.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<ReplicationRecord> out;
    out.reserve(tasks * cell.methods.size());
    for (auto& r : results)
        for (auto& rec : r)
            out.push_back(std::move(rec));
    return out;
}

struct SummaryRow
{
    Method method = Method::ref_ds;
    Index grid_index = 0;
    double beta1 = 0.0;
    double bias = std::nan("");
    double coverage = std::nan("");
    double empirical_se = std::nan("");
    double model_se = std::nan("");
    double divergence_rate = 1.0;  // share of replications without a usable estimate
    int used = 0;
    int total = 0;

    bool present() const { return used > 0; }
};

struct SimSummary
{
    std::vector<SummaryRow> rows;

    std::optional<SummaryRow> find(Method m, double beta1) const
    {
        for (auto const& r : rows)
            if (r.method == m && r.beta1 == beta1) return r;
        return std::nullopt;
    }
};

/**
 * Aggregates per (method, grid point), methods in order of first appearance
 * and grid points in index order. Records without a usable estimate are
 * excluded from the statistics and counted in divergence_rate.
 */
inline SimSummary summarize(std::vector<ReplicationRecord> const& records)
{
    std::vector<Method> methods;
    std::map<Index, double> grid;
    for (auto const& r : records) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
        grid.emplace(r.grid_index, r.beta1);
    }

    SimSummary s;
    for (Method m : methods) {
        for (auto const& [g, beta1] : grid) {
            SummaryRow row;
            row.method = m;
            row.grid_index = g;
            row.beta1 = beta1;
            std::vector<ReplicationRecord const*> ok;
            for (auto const& r : records) {
                if (r.method != m || r.grid_index != g) continue;
                ++row.total;
                if (r.status == RecordStatus::ok) ok.push_back(&r);
            }
            row.used = static_cast<int>(ok.size());
            if (row.total > 0) row.divergence_rate = 1.0 - static_cast<double>(row.used) / row.total;
            if (!ok.empty()) {
                double k = static_cast<double>(ok.size());
                double mean = 0.0, se = 0.0, cov = 0.0;
                for (auto const* r : ok) {
                    mean += r->estimate;
                    se += r->se;
                    cov += r->covered ? 1.0 : 0.0;
                }
                mean /= k;
                double ss = 0.0;
                for (auto const* r : ok)
                    ss += (r->estimate - mean) * (r->estimate - mean);
                row.bias = mean - beta1;
                row.coverage = cov / k;
                row.model_se = se / k;
                row.empirical_se = ok.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
            }
            s.rows.push_back(row);
        }
    }
    return s;
}

} // namespace dbglm
