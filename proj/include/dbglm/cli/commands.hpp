#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "../debias.hpp"
#include "../lasso.hpp"
#include "../simulate.hpp"
#include "../theta.hpp"
#include "config.hpp"
#include "io.hpp"

namespace dbglm::cli {

inline constexpr char const* inference_header = "name,estimate,se,ci_lower,ci_upper,method";
inline constexpr char const* contrast_header = "contrast,estimate,se,ci_lower,ci_upper,level";
inline constexpr char const* records_header =
    "cell,p,beta1_index,beta1,replication,seed,method,status,lambda,estimate,se,ci_lower,ci_upper,covered,diverged,"
    "term_I,term_II,term_III,identity_error,note";
inline constexpr char const* summary_header =
    "cell,p,method,beta1,bias,coverage,empirical_se,model_se,divergence_rate,replications_used,replications";

/// One de-biased estimate on the scale of the input columns.
struct MethodResult
{
    ThetaMethod method = ThetaMethod::hessian_inverse;
    DebiasedEstimate est;
    ThetaMatrix theta;
    Matrix sigma_hat;  // Hessian on the output scale (Hessian-inverse method only)
};

struct FitResult
{
    std::vector<std::string> names;  // "(Intercept)" then predictors
    GlmFamily family = GlmFamily::logistic();
    Index n = 0;
    Index p = 0;
    CvResult cv;
    LassoFit lasso;
    Vector xi_hat;  // lasso fit on the output scale
    std::optional<Vector> center;
    std::optional<Vector> scale;
    std::vector<MethodResult> results;
};

namespace detail {

inline std::string method_label(ThetaMethod m)
{
    return m == ThetaMethod::hessian_inverse ? "ref_ds" : "orig_ds";
}

inline json to_json(Vector const& v)
{
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i)
        a.push_back(v(i));
    return a;
}

inline json to_json(Matrix const& m)
{
    json a = json::array();
    for (Index i = 0; i < m.rows(); ++i)
        a.push_back(to_json(Vector(m.row(i).transpose())));
    return a;
}

inline Vector vector_from(json const& a, std::string const& what)
{
    if (!a.is_array()) throw ConfigError(what + " must be an array");
    Vector v(static_cast<Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) throw ConfigError(what + " holds a non-number");
        v(static_cast<Index>(i)) = a[i].get<double>();
    }
    return v;
}

inline Matrix matrix_from(json const& a, std::string const& what)
{
    if (!a.is_array() || a.empty()) throw ConfigError(what + " must be a non-empty array of rows");
    Index rows = static_cast<Index>(a.size());
    Vector first = vector_from(a[0], what);
    Matrix m(rows, first.size());
    for (Index i = 0; i < rows; ++i) {
        Vector r = vector_from(a[static_cast<std::size_t>(i)], what);
        if (r.size() != m.cols()) throw ConfigError(what + " is ragged");
        m.row(i) = r.transpose();
    }
    return m;
}

} // namespace detail

/**
 * Lasso with CV-selected lambda on the configured CSV, then the chosen
 * de-biasing. With `standardize`, predictors are centred and scaled to unit
 * variance for fitting and every output is mapped back to the input scale.
 */
inline FitResult run_fit(FitConfig const& cfg)
{
    auto table = io::read_numeric_csv(cfg.data);
    auto const& header = table.header;
    auto column = [&](std::string const& name) -> Index {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ConfigError("column \"" + name + "\" not found in " + cfg.data.string());
        if (std::find(it + 1, header.end(), name) != header.end())
            throw ConfigError("column \"" + name + "\" appears twice in " + cfg.data.string());
        return static_cast<Index>(it - header.begin());
    };
    Index const yc = column(cfg.response);
    std::vector<std::string> preds;
    if (cfg.predictors) {
        preds = *cfg.predictors;
    } else {
        for (auto const& h : header)
            if (h != cfg.response) preds.push_back(h);
    }
    if (preds.empty()) throw ConfigError("no predictor columns");

    Index const n = table.values.rows();
    Index const p = static_cast<Index>(preds.size());
    if (n < 2) throw InputError("need at least two data rows");
    Matrix X(n, p + 1);
    X.col(0).setOnes();
    FitResult out;
    out.names.push_back("(Intercept)");
    for (Index k = 0; k < p; ++k) {
        std::string const& name = preds[static_cast<std::size_t>(k)];
        if (name == cfg.response) throw ConfigError("response column listed as a predictor");
        X.col(k + 1) = table.values.col(column(name));
        out.names.push_back(name);
    }
    Vector y = table.values.col(yc);

    // Output coefficients are T times fitted ones.
    Matrix T = Matrix::Identity(p + 1, p + 1);
    if (cfg.standardize) {
        Vector mu(p), sd(p);
        for (Index k = 0; k < p; ++k) {
            auto col = X.col(k + 1);
            mu(k) = col.mean();
            sd(k) = std::sqrt((col.array() - mu(k)).square().mean());
            if (!(sd(k) > 0.0)) throw InputError("predictor \"" + preds[static_cast<std::size_t>(k)] +
                                                  "\" is constant and cannot be standardized");
            col = (col.array() - mu(k)) / sd(k);
            T(0, k + 1) = -mu(k) / sd(k);
            T(k + 1, k + 1) = 1.0 / sd(k);
        }
        out.center = mu;
        out.scale = sd;
    }

    Dataset data(std::move(X), std::move(y));
    validate(cfg.family, data);
    bool const want_ref = cfg.method != DebiasChoice::orig_ds;
    bool const want_orig = cfg.method != DebiasChoice::ref_ds;
    if (want_ref && p + 1 > n)
        throw SingularMatrixError("REF-DS needs p + 1 <= n (here p + 1 = " + std::to_string(p + 1) + ", n = " +
                                      std::to_string(n) + "): the empirical Hessian is singular and has no inverse; "
                                      "use method orig_ds",
                                  0.0);

    double ratio = cfg.lambda_ratio.value_or(default_lambda_ratio(n, p));
    Vector grid = lambda_grid(cfg.family, data, cfg.n_lambda, ratio);
    out.cv = cross_validate(cfg.family, data, cfg.cv_folds, grid, derive_seed(cfg.seed, 0));
    out.lasso = fit_at_lambda_min(cfg.family, data, out.cv);
    out.family = cfg.family;
    out.n = n;
    out.p = p;
    out.xi_hat = T * out.lasso.xi_hat.xi();

    Matrix const sigma = hessian_matrix(cfg.family, data, out.lasso.xi_hat);
    auto finish = [&](ThetaMatrix theta) {
        MethodResult r;
        r.method = theta.method;
        r.est = debias(out.lasso, theta, cfg.family, data);
        r.sigma_hat = sigma;
        if (cfg.standardize) {
            Matrix cov = theta.values * sigma * theta.values.transpose() / static_cast<double>(n);
            r.est.b = T * r.est.b;
            r.est.se = (T * cov * T.transpose()).diagonal().cwiseSqrt();
            Matrix Tinv = T.inverse();
            r.sigma_hat = Tinv.transpose() * sigma * Tinv;
            theta.values = T * theta.values * T.transpose();
        }
        r.theta = std::move(theta);
        out.results.push_back(std::move(r));
    };
    if (want_ref) finish(hessian_inverse_theta(sigma));
    if (want_orig) {
        NodewiseOptions opt;
        opt.folds = cfg.nodewise_folds;
        opt.n_lambda = cfg.n_lambda;
        opt.lambda_ratio = cfg.lambda_ratio;
        finish(nodewise_theta(cfg.family, data, out.lasso.xi_hat, derive_seed(cfg.seed, 1), opt));
    }
    return out;
}

inline std::string inference_csv(FitResult const& r, double level)
{
    std::ostringstream s;
    s << inference_header << '\n';
    for (auto const& m : r.results) {
        for (Index j = 0; j <= r.p; ++j) {
            auto ci = coefficient_ci(m.est, j, level);
            s << io::quote_csv(r.names[static_cast<std::size_t>(j)]) << ',' << io::fmt(ci.point) << ','
              << io::fmt(ci.se) << ',' << io::fmt(ci.lower) << ',' << io::fmt(ci.upper) << ','
              << detail::method_label(m.method) << '\n';
        }
    }
    return s.str();
}

inline json fit_json(FitResult const& r, FitConfig const& cfg)
{
    json j;
    j["format"] = "dbglm-fit";
    j["version"] = 1;
    j["family"] = std::string(r.family.name());
    j["response"] = cfg.response;
    j["names"] = r.names;
    j["n"] = r.n;
    j["p"] = r.p;
    j["seed"] = cfg.seed;
    j["level"] = cfg.level;
    j["standardize"] = cfg.standardize;
    if (r.center) {
        j["center"] = detail::to_json(*r.center);
        j["scale"] = detail::to_json(*r.scale);
    }
    j["lasso"] = {{"lambda", r.lasso.lambda},
                  {"lambda_index", r.cv.lambda_min_index},
                  {"xi_hat", detail::to_json(r.xi_hat)},
                  {"converged", r.lasso.converged},
                  {"kkt_residual", r.lasso.kkt_residual}};
    j["cv"] = {{"folds", cfg.cv_folds},
               {"folds_used", r.cv.folds_used},
               {"skipped_folds", r.cv.skipped_folds},
               {"lambda_grid", detail::to_json(r.cv.lambda_grid)},
               {"cv_mean", detail::to_json(r.cv.cv_mean)},
               {"cv_se", detail::to_json(r.cv.cv_se)}};
    json est = json::array();
    for (auto const& m : r.results) {
        json e;
        e["method"] = detail::method_label(m.method);
        e["b"] = detail::to_json(m.est.b);
        e["se"] = detail::to_json(m.est.se);
        e["theta"] = detail::to_json(m.theta.values);
        if (m.method == ThetaMethod::hessian_inverse) e["sigma_hat"] = detail::to_json(m.sigma_hat);
        if (m.theta.tau_sq) e["tau_sq"] = detail::to_json(*m.theta.tau_sq);
        if (m.theta.node_lambdas) e["node_lambdas"] = detail::to_json(*m.theta.node_lambdas);
        est.push_back(std::move(e));
    }
    j["estimates"] = std::move(est);
    return j;
}

/// Runs `fit` and writes fit.json and inference.csv into the output directory.
inline FitResult cmd_fit(FitConfig const& cfg)
{
    auto r = run_fit(cfg);
    io::ensure_directory(cfg.output_dir);
    io::write_text(cfg.output_dir / "fit.json", fit_json(r, cfg).dump(2) + "\n");
    io::write_text(cfg.output_dir / "inference.csv", inference_csv(r, cfg.level));
    return r;
}

/// Hessian-inverse estimate reloaded from fit.json.
struct SavedFit
{
    std::vector<std::string> names;
    DebiasedEstimate est;
    ThetaMatrix theta;
    Matrix sigma_hat;
};

inline SavedFit load_fit(std::filesystem::path const& path)
{
    json j = cli::detail::parse_json_file(path);
    if (!j.is_object() || j.value("format", "") != "dbglm-fit")
        throw ConfigError(path.string() + " is not a fit.json written by dbglm fit");
    SavedFit s;
    s.names = j.at("names").get<std::vector<std::string>>();
    auto const& ests = j.at("estimates");
    auto it = std::find_if(ests.begin(), ests.end(), [](json const& e) { return e.value("method", "") == "ref_ds"; });
    if (it == ests.end())
        throw InputError(path.string() + " holds no ref_ds estimate; contrast intervals require the Hessian-inverse "
                                         "estimate (refit with method ref_ds or both)");
    s.est.b = detail::vector_from(it->at("b"), "b");
    s.est.se = detail::vector_from(it->at("se"), "se");
    s.est.method = ThetaMethod::hessian_inverse;
    s.est.n = j.at("n").get<Index>();
    s.est.lambda_used = j.at("lasso").at("lambda").get<double>();
    s.theta.values = detail::matrix_from(it->at("theta"), "theta");
    s.theta.method = ThetaMethod::hessian_inverse;
    s.sigma_hat = detail::matrix_from(it->at("sigma_hat"), "sigma_hat");
    Index d = s.est.b.size();
    if (static_cast<Index>(s.names.size()) != d || s.theta.values.rows() != d || s.sigma_hat.rows() != d)
        throw ConfigError(path.string() + ": inconsistent dimensions");
    return s;
}

/**
 * Contrast weights: a path to a CSV file (one contrast per line, optional
 * header line of coefficient names), or inline comma-separated weights with
 * ';' between contrasts.
 */
inline std::vector<Vector> parse_contrasts(std::string const& spec, std::vector<std::string> const& names)
{
    std::vector<std::string> lines;
    std::error_code ec;
    if (std::filesystem::is_regular_file(spec, ec)) {
        std::istringstream in(io::read_text(spec));
        std::string line;
        while (std::getline(in, line))
            if (!io::trim(line).empty()) lines.push_back(line);
        if (!lines.empty() && io::split_csv(lines[0]) == names) lines.erase(lines.begin());
    } else {
        std::string cur;
        for (char c : spec + ";") {
            if (c == ';') {
                if (!io::trim(cur).empty()) lines.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
    }
    if (lines.empty()) throw InputError("no contrast weights given");
    std::vector<Vector> out;
    for (std::size_t k = 0; k < lines.size(); ++k) {
        auto cells = io::split_csv(lines[k]);
        if (cells.size() != names.size())
            throw DimensionError("contrast " + std::to_string(k + 1) + " has " + std::to_string(cells.size()) +
                                 " weights; the fit has " + std::to_string(names.size()) + " coefficients");
        Vector a(static_cast<Index>(cells.size()));
        for (std::size_t c = 0; c < cells.size(); ++c)
            if (!io::parse_number(cells[c], a(static_cast<Index>(c))))
                throw InputError("contrast " + std::to_string(k + 1) + ": \"" + cells[c] + "\" is not a number");
        out.push_back(std::move(a));
    }
    return out;
}

inline std::vector<ConfidenceInterval> run_infer(SavedFit const& fit, std::vector<Vector> const& contrasts,
                                                 double level)
{
    std::vector<ConfidenceInterval> out;
    for (auto const& a : contrasts)
        out.push_back(contrast_ci(fit.est, fit.theta, fit.sigma_hat, a, level));
    return out;
}

inline std::string contrast_csv(std::vector<ConfidenceInterval> const& cis)
{
    std::ostringstream s;
    s << contrast_header << '\n';
    for (std::size_t k = 0; k < cis.size(); ++k) {
        auto const& c = cis[k];
        s << k + 1 << ',' << io::fmt(c.point) << ',' << io::fmt(c.se) << ',' << io::fmt(c.lower) << ','
          << io::fmt(c.upper) << ',' << io::fmt(c.level) << '\n';
    }
    return s.str();
}

inline std::string cmd_infer(std::filesystem::path const& fit_path, std::string const& contrast, double level)
{
    auto fit = load_fit(fit_path);
    return contrast_csv(run_infer(fit, parse_contrasts(contrast, fit.names), level));
}

struct CellOutput
{
    std::string name;
    Index p = 0;
    std::vector<ReplicationRecord> records;
    SimSummary summary;
};

inline std::string records_csv(std::vector<CellOutput> const& cells)
{
    std::ostringstream s;
    s << records_header << '\n';
    for (auto const& c : cells) {
        for (auto const& r : c.records) {
            s << io::quote_csv(c.name) << ',' << c.p << ',' << r.grid_index << ',' << io::fmt(r.beta1) << ','
              << r.replication << ',' << r.seed << ',' << to_string(r.method) << ',' << to_string(r.status) << ','
              << io::fmt(r.lambda) << ',' << io::fmt(r.estimate) << ',' << io::fmt(r.se) << ','
              << io::fmt(r.ci_lower) << ',' << io::fmt(r.ci_upper) << ',' << (r.covered ? 1 : 0) << ','
              << (r.status == RecordStatus::diverged ? 1 : 0) << ',';
            if (r.audit)
                s << io::fmt(r.audit->term_I) << ',' << io::fmt(r.audit->term_II) << ','
                  << io::fmt(r.audit->term_III) << ',' << io::fmt(r.audit->identity_error);
            else
                s << "nan,nan,nan,nan";
            s << ',' << io::quote_csv(r.note) << '\n';
        }
    }
    return s.str();
}

inline std::string summary_csv(std::vector<CellOutput> const& cells)
{
    std::ostringstream s;
    s << summary_header << '\n';
    for (auto const& c : cells)
        for (auto const& r : c.summary.rows)
            s << io::quote_csv(c.name) << ',' << c.p << ',' << to_string(r.method) << ',' << io::fmt(r.beta1) << ','
              << io::fmt(r.bias) << ',' << io::fmt(r.coverage) << ',' << io::fmt(r.empirical_se) << ','
              << io::fmt(r.model_se) << ',' << io::fmt(r.divergence_rate) << ',' << r.used << ',' << r.total
              << '\n';
    return s.str();
}

/// Runs every cell and writes records.csv and summary.csv into `out_dir`.
inline std::vector<CellOutput> cmd_simulate(SimulateConfig const& cfg, std::filesystem::path const& out_dir,
                                            std::ostream* log = nullptr)
{
    io::ensure_directory(out_dir);
    std::vector<CellOutput> cells;
    for (auto const& nc : cfg.cells) {
        std::function<void(std::size_t, std::size_t)> progress;
        if (log)
            progress = [&](std::size_t done, std::size_t total) {
                if (done == total || done % 10 == 0)
                    *log << nc.name << ": " << done << "/" << total << " replications\n" << std::flush;
            };
        CellOutput c;
        c.name = nc.name;
        c.p = nc.cell.p;
        c.records = run_cell(nc.cell, progress);
        c.summary = summarize(c.records);
        cells.push_back(std::move(c));
    }
    io::write_text(out_dir / "records.csv", records_csv(cells));
    io::write_text(out_dir / "summary.csv", summary_csv(cells));
    return cells;
}

} // namespace dbglm::cli
