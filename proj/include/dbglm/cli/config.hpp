#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "../error.hpp"
#include "../family.hpp"
#include "../simulate.hpp"
#include "io.hpp"

namespace dbglm::cli {

using json = nlohmann::json;

enum class DebiasChoice { ref_ds, orig_ds, both };

struct FitConfig
{
    std::filesystem::path data;
    std::string response;
    std::optional<std::vector<std::string>> predictors;
    GlmFamily family = GlmFamily::logistic();
    DebiasChoice method = DebiasChoice::ref_ds;
    double level = 0.95;
    int cv_folds = 10;
    int nodewise_folds = 5;
    int n_lambda = 100;
    std::optional<double> lambda_ratio;
    std::uint64_t seed = 0;
    bool standardize = false;
    std::filesystem::path output_dir = ".";
};

struct NamedCell
{
    std::string name;
    SimulationCell cell;
};

struct SimulateConfig
{
    std::vector<NamedCell> cells;
    int threads = 1;
    std::optional<std::filesystem::path> output_dir;
};

namespace detail {

/// Reads keys from one JSON object and rejects any it was never asked for.
class Reader
{
public:
    Reader(json const& obj, std::string where) : obj_(obj), where_(std::move(where))
    {
        if (!obj_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    }

    bool has(std::string const& key)
    {
        known_.insert(key);
        return obj_.contains(key);
    }

    template <class T>
    T get(std::string const& key)
    {
        known_.insert(key);
        if (!obj_.contains(key)) throw ConfigError(where_ + ": missing required key \"" + key + "\"");
        return convert<T>(key);
    }

    template <class T>
    T get_or(std::string const& key, T fallback)
    {
        known_.insert(key);
        return obj_.contains(key) ? convert<T>(key) : fallback;
    }

    json const& raw(std::string const& key)
    {
        known_.insert(key);
        return obj_.at(key);
    }

    void finish() const
    {
        for (auto const& [k, v] : obj_.items())
            if (!known_.count(k)) throw ConfigError(where_ + ": unknown key \"" + k + "\"");
    }

    std::string const& where() const { return where_; }

private:
    template <class T>
    T convert(std::string const& key)
    {
        json const& v = obj_.at(key);
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_integer()) throw ConfigError("");
                if constexpr (std::is_unsigned_v<T>)
                    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
                        throw ConfigError("");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            return v.get<T>();
        } catch (std::exception const&) {
            throw ConfigError(where_ + ": key \"" + key + "\" has the wrong type (" + v.dump() + ")");
        }
    }

    json const& obj_;
    std::string where_;
    std::set<std::string> known_;
};

inline json parse_json_file(std::filesystem::path const& path)
{
    std::string text = io::read_text(path);
    try {
        return json::parse(text);
    } catch (json::parse_error const& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

inline GlmFamily parse_family(std::string const& s, std::string const& where)
{
    auto f = GlmFamily::parse(s);
    if (!f) throw ConfigError(where + ": unknown family \"" + s + "\" (gaussian, logistic, poisson)");
    return *f;
}

inline std::filesystem::path resolve(std::filesystem::path const& base, std::filesystem::path const& p)
{
    return p.is_absolute() ? p : base / p;
}

inline void apply_cell_keys(Reader& r, SimulationCell& c, bool& have_seed, std::optional<std::vector<double>>& values)
{
    if (r.has("family")) c.family = parse_family(r.get<std::string>("family"), r.where());
    if (r.has("n")) c.n = r.get<Index>("n");
    if (r.has("p")) c.p = r.get<Index>("p");
    if (r.has("covariance")) {
        Reader cov(r.raw("covariance"), r.where() + ".covariance");
        auto kind = CovarianceSpec::parse_kind(cov.get<std::string>("kind"));
        if (!kind) throw ConfigError(cov.where() + ": unknown kind (identity, ar1, compound_symmetry)");
        c.cov.kind = *kind;
        c.cov.rho = cov.get_or<double>("rho", 0.0);
        cov.finish();
    }
    if (r.has("beta0")) c.beta0 = r.get<double>("beta0");
    if (r.has("beta1_grid")) c.beta1_grid = r.get<std::vector<double>>("beta1_grid");
    bool explicit_signals = r.has("extra_signals");
    bool default_signals = r.has("extra_signal_values");
    if (explicit_signals && default_signals)
        throw ConfigError(r.where() + ": give either extra_signals or extra_signal_values, not both");
    if (explicit_signals) {
        json const& arr = r.raw("extra_signals");
        if (!arr.is_array()) throw ConfigError(r.where() + ".extra_signals must be an array");
        c.extra_signals.clear();
        for (std::size_t k = 0; k < arr.size(); ++k) {
            Reader s(arr[k], r.where() + ".extra_signals[" + std::to_string(k) + "]");
            c.extra_signals.push_back({s.get<Index>("index"), s.get<double>("value")});
            s.finish();
        }
        values.reset();
    }
    if (default_signals) values = r.get<std::vector<double>>("extra_signal_values");
    if (r.has("replications")) c.replications = r.get<int>("replications");
    if (r.has("seed")) {
        c.seed = r.get<std::uint64_t>("seed");
        have_seed = true;
    }
    if (r.has("methods")) {
        c.methods.clear();
        for (auto const& m : r.get<std::vector<std::string>>("methods")) {
            auto pm = parse_method(m);
            if (!pm) throw ConfigError(r.where() + ": unknown method \"" + m + "\" (ref_ds, orig_ds, mle, oracle)");
            if (std::find(c.methods.begin(), c.methods.end(), *pm) != c.methods.end())
                throw ConfigError(r.where() + ": method \"" + m + "\" listed twice");
            c.methods.push_back(*pm);
        }
    }
    if (r.has("truncation")) c.truncation = r.get<double>("truncation");
    if (r.has("audit")) c.audit = r.get<bool>("audit");
    if (r.has("level")) c.level = r.get<double>("level");
    if (r.has("cv_folds")) c.cv_folds = r.get<int>("cv_folds");
    if (r.has("nodewise_folds")) c.nodewise_folds = r.get<int>("nodewise_folds");
    if (r.has("n_lambda")) c.n_lambda = r.get<int>("n_lambda");
    if (r.has("lambda_ratio")) c.lambda_ratio = r.get<double>("lambda_ratio");
}

} // namespace detail

/// Fit configuration; relative paths resolve against the config file's directory.
inline FitConfig parse_fit_config(json const& j, std::filesystem::path const& base_dir)
{
    detail::Reader r(j, "fit config");
    FitConfig c;
    c.data = detail::resolve(base_dir, r.get<std::string>("data"));
    c.response = r.get<std::string>("response");
    if (r.has("predictors")) c.predictors = r.get<std::vector<std::string>>("predictors");
    c.family = detail::parse_family(r.get<std::string>("family"), "fit config");
    std::string m = r.get_or<std::string>("method", "ref_ds");
    if (m == "ref_ds") c.method = DebiasChoice::ref_ds;
    else if (m == "orig_ds") c.method = DebiasChoice::orig_ds;
    else if (m == "both") c.method = DebiasChoice::both;
    else throw ConfigError("fit config: unknown method \"" + m + "\" (ref_ds, orig_ds, both)");
    c.level = r.get_or<double>("level", 0.95);
    c.cv_folds = r.get_or<int>("cv_folds", 10);
    c.nodewise_folds = r.get_or<int>("nodewise_folds", 5);
    c.n_lambda = r.get_or<int>("n_lambda", 100);
    if (r.has("lambda_ratio")) c.lambda_ratio = r.get<double>("lambda_ratio");
    c.seed = r.get<std::uint64_t>("seed");
    c.standardize = r.get_or<bool>("standardize", false);
    c.output_dir = detail::resolve(base_dir, r.get_or<std::string>("output_dir", "."));
    r.finish();

    if (!(c.level > 0.0 && c.level < 1.0)) throw ConfigError("fit config: level must lie in (0, 1)");
    if (c.cv_folds < 2 || c.nodewise_folds < 2) throw ConfigError("fit config: folds must be at least 2");
    if (c.n_lambda < 2) throw ConfigError("fit config: n_lambda must be at least 2");
    if (c.lambda_ratio && !(*c.lambda_ratio > 0.0 && *c.lambda_ratio < 1.0))
        throw ConfigError("fit config: lambda_ratio must lie in (0, 1)");
    return c;
}

inline FitConfig load_fit_config(std::filesystem::path const& path)
{
    return parse_fit_config(detail::parse_json_file(path), path.parent_path());
}

/**
 * Either a single cell (cell keys at the top level) or
 * {"defaults": {...}, "cells": [{...}, ...]}, each cell overriding the
 * defaults. `threads` and `output_dir` are top-level only.
 */
inline SimulateConfig parse_simulate_config(json const& j, std::filesystem::path const& base_dir)
{
    detail::Reader top(j, "simulate config");
    SimulateConfig out;
    out.threads = top.get_or<int>("threads", 1);
    if (out.threads < 1) throw ConfigError("simulate config: threads must be at least 1");
    if (top.has("output_dir")) out.output_dir = detail::resolve(base_dir, top.get<std::string>("output_dir"));

    auto build = [&](std::vector<std::pair<json const*, std::string>> const& layers, std::string name) {
        SimulationCell c;
        bool have_seed = false;
        std::optional<std::vector<double>> values;
        for (auto const& [obj, where] : layers) {
            detail::Reader r(*obj, where);
            if (r.has("name")) name = r.get<std::string>("name");
            detail::apply_cell_keys(r, c, have_seed, values);
            r.finish();
        }
        if (!have_seed) throw ConfigError("cell \"" + name + "\": seed is mandatory");
        if (values) c.extra_signals = default_extra_signals(c.p, *values);
        c.threads = out.threads;
        try {
            c.validate();
        } catch (InputError const& e) {
            throw ConfigError("cell \"" + name + "\": " + e.what());
        }
        return NamedCell{name, c};
    };

    if (top.has("cells")) {
        json const& cells = top.raw("cells");
        if (!cells.is_array() || cells.empty()) throw ConfigError("simulate config: cells must be a non-empty array");
        json empty = json::object();
        json const& defaults = top.has("defaults") ? top.raw("defaults") : empty;
        if (defaults.contains("name")) throw ConfigError("simulate config: defaults may not set a name");
        std::set<std::string> names;
        for (std::size_t k = 0; k < cells.size(); ++k) {
            std::string where = "cells[" + std::to_string(k) + "]";
            auto nc = build({{&defaults, "defaults"}, {&cells[k], where}}, "cell" + std::to_string(k + 1));
            if (!names.insert(nc.name).second) throw ConfigError("simulate config: duplicate cell name " + nc.name);
            out.cells.push_back(std::move(nc));
        }
        top.finish();
    } else {
        json rest = j;
        rest.erase("threads");
        rest.erase("output_dir");
        out.cells.push_back(build({{&rest, "simulate config"}}, "cell1"));
    }
    return out;
}

inline SimulateConfig load_simulate_config(std::filesystem::path const& path)
{
    return parse_simulate_config(detail::parse_json_file(path), path.parent_path());
}

} // namespace dbglm::cli
