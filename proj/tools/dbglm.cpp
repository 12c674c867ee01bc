// dbglm: de-biased lasso fits, contrast intervals and coverage simulations.
//
// Exit status: 0 success, 2 configuration or input error, 3 numerical failure.

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <dbglm/cli/commands.hpp>

namespace {

constexpr int exit_config = 2;
constexpr int exit_numerical = 3;

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"De-biased lasso inference for generalized linear models"};
    app.require_subcommand(1);

    std::string fit_config, fit_out;
    auto* fit = app.add_subcommand("fit", "Fit the lasso on a CSV file and write de-biased estimates");
    fit->add_option("--config", fit_config, "JSON fit configuration")->required();
    fit->add_option("--out", fit_out, "Output directory (overrides output_dir)");

    std::string infer_fit, infer_contrast, infer_out;
    double infer_level = 0.95;
    auto* infer = app.add_subcommand("infer", "Confidence intervals for unit-norm contrasts of a saved REF-DS fit");
    infer->add_option("--fit", infer_fit, "fit.json written by the fit command")->required();
    infer->add_option("--contrast", infer_contrast,
                      "CSV file of weights, one contrast per line, or inline weights such as 0,1,0 (';' separates)")
        ->required();
    infer->add_option("--level", infer_level, "Confidence level")->check(CLI::Range(0.0, 1.0));
    infer->add_option("--out", infer_out, "Write the CSV here instead of standard output");

    std::string sim_config, sim_out;
    std::optional<int> sim_threads;
    bool quiet = false;
    auto* sim = app.add_subcommand("simulate", "Run coverage simulations and write records.csv and summary.csv");
    sim->add_option("--config", sim_config, "JSON simulation configuration")->required();
    sim->add_option("--out", sim_out, "Output directory (overrides output_dir)");
    sim->add_option("--threads", sim_threads, "Worker threads (overrides threads)")->check(CLI::PositiveNumber);
    sim->add_flag("--quiet", quiet, "No progress messages");

    try {
        app.parse(argc, argv);
    } catch (CLI::ParseError const& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : exit_config;
    }

    try {
        if (*fit) {
            auto cfg = dbglm::cli::load_fit_config(fit_config);
            if (!fit_out.empty()) cfg.output_dir = fit_out;
            auto r = dbglm::cli::cmd_fit(cfg);
            std::cerr << "lambda = " << dbglm::io::fmt(r.lasso.lambda) << "; wrote " << (cfg.output_dir / "fit.json")
                      << " and " << (cfg.output_dir / "inference.csv") << "\n";
        } else if (*infer) {
            std::string csv = dbglm::cli::cmd_infer(infer_fit, infer_contrast, infer_level);
            if (infer_out.empty())
                std::cout << csv;
            else
                dbglm::io::write_text(infer_out, csv);
        } else if (*sim) {
            auto cfg = dbglm::cli::load_simulate_config(sim_config);
            if (sim_threads)
                for (auto& c : cfg.cells)
                    c.cell.threads = *sim_threads;
            std::filesystem::path out = !sim_out.empty() ? std::filesystem::path(sim_out)
                                                         : cfg.output_dir.value_or(std::filesystem::path{});
            if (out.empty()) throw dbglm::ConfigError("no output directory: pass --out or set output_dir");
            dbglm::cli::cmd_simulate(cfg, out, quiet ? nullptr : &std::cerr);
        }
    } catch (dbglm::InputError const& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_config;
    } catch (nlohmann::json::exception const& e) {
        std::cerr << "error: malformed JSON input: " << e.what() << "\n";
        return exit_config;
    } catch (dbglm::NumericalError const& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return exit_numerical;
    } catch (std::exception const& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return exit_numerical;
    }
    return 0;
}
