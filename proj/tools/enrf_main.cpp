// enrf: twin-experiment driver for the ensemble robust filter family.
//
// Subcommands:
//   run          execute the configured (filter, M, realization) grid as-is
//   sweep        same grid, but tune sEnKF inflation/localization first
//   tune         inflation (and radius) tuning table for one filter
//   dof-trace    per-cycle dof estimates of the adaptive EnRF
//   convergence  synthetic analysis-step convergence study

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "enrf/config.hpp"
#include "enrf/emit.hpp"
#include "enrf/harness.hpp"

namespace {

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    for (const auto& tok : enrf::detail::split_list(csv))
        out.push_back(static_cast<int>(enrf::detail::parse_int("list", tok)));
    return out;
}

const enrf::FilterEntry& find_filter(const enrf::ExperimentConfig& config,
                                     const std::string& name) {
    for (const auto& entry : config.filters)
        if (entry.spec.name == name) return entry;
    throw enrf::ArgumentError("filter '" + name + "' is not in the config");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ensemble robust filter twin-experiment harness"};
    app.require_subcommand(1);

    std::string config_path, out_dir, filter_name = "senkf";
    std::string m_grid_csv = "100,200,400,600";
    int replicates = 200;
    int ensemble_size = 0;  // 0 = first configured size
    int conv_n = 10, conv_d = 5;
    double conv_nu = 2.5, rho_coeff = 0.5;
    std::uint64_t seed = 0;
    bool seed_set = false, plots = false;
    int threads = 0;

    auto* seed_opt = app.add_option("--seed", seed, "override the config seed");
    app.add_option("--threads", threads, "worker threads (0 = hardware)");
    app.add_flag("--plots", plots, "also write plots.svg");

    auto* run_cmd = app.add_subcommand("run", "run the configured experiment grid");
    run_cmd->add_option("--config", config_path, "config file")->required();
    run_cmd->add_option("--out", out_dir, "output directory")->required();

    auto* sweep_cmd = app.add_subcommand("sweep", "tuned ensemble-size sweep");
    sweep_cmd->add_option("--config", config_path, "config file")->required();
    sweep_cmd->add_option("--out", out_dir, "output directory")->required();

    auto* tune_cmd = app.add_subcommand("tune", "inflation tuning table");
    tune_cmd->add_option("--config", config_path, "config file")->required();
    tune_cmd->add_option("--filter", filter_name, "filter name to tune");
    tune_cmd->add_option("--out", out_dir, "output directory")->required();
    tune_cmd->add_option("--m", ensemble_size, "ensemble size (default: first configured)");

    auto* dof_cmd = app.add_subcommand("dof-trace", "adaptive EnRF dof trace");
    dof_cmd->add_option("--config", config_path, "config file")->required();
    dof_cmd->add_option("--out", out_dir, "output directory")->required();
    dof_cmd->add_option("--m", ensemble_size, "ensemble size (default: first configured)");

    auto* conv_cmd = app.add_subcommand("convergence", "analysis-step convergence study");
    conv_cmd->add_option("--m-grid", m_grid_csv, "comma list of ensemble sizes");
    conv_cmd->add_option("--replicates", replicates, "replicates per ensemble size");
    conv_cmd->add_option("--out", out_dir, "output directory")->required();
    conv_cmd->add_option("--n", conv_n, "state dimension");
    conv_cmd->add_option("--d", conv_d, "observation dimension");
    conv_cmd->add_option("--nu", conv_nu, "degree of freedom of the joint");
    conv_cmd->add_option("--rho-coeff", rho_coeff, "penalty coefficient c in rho = c/sqrt(M)");

    CLI11_PARSE(app, argc, argv);
    seed_set = seed_opt->count() > 0;

    try {
        if (conv_cmd->parsed()) {
            const auto result = enrf::convergence_study(
                conv_n, conv_d, conv_nu, parse_int_list(m_grid_csv), replicates,
                seed_set ? seed : 0, rho_coeff, threads);
            enrf::emit_convergence(result, seed_set ? seed : 0, plots, out_dir);
            std::printf("wrote %s/convergence.csv\n", out_dir.c_str());
            return 0;
        }

        enrf::ExperimentConfig config = enrf::load_config(config_path);
        if (seed_set) config.seed = seed;
        if (threads > 0) config.threads = threads;
        if (plots) config.plots = true;
        const int M = ensemble_size > 0 ? ensemble_size : config.ensemble_sizes.front();

        if (run_cmd->parsed()) {
            for (auto& entry : config.filters) {
                entry.tune_inflation = false;
                entry.tune_localization = false;
            }
            const auto sweep = enrf::sweep_ensemble_sizes(config);
            enrf::emit_outputs(sweep, config, out_dir);
            std::printf("wrote %s/metrics.csv and %s/summary.json\n", out_dir.c_str(),
                        out_dir.c_str());
        } else if (sweep_cmd->parsed()) {
            const auto sweep = enrf::sweep_ensemble_sizes(config);
            enrf::emit_outputs(sweep, config, out_dir);
            std::printf("wrote %s/metrics.csv and %s/summary.json\n", out_dir.c_str(),
                        out_dir.c_str());
        } else if (tune_cmd->parsed()) {
            const auto& entry = find_filter(config, filter_name);
            const auto tuned = enrf::tune_filter(config, entry, M);
            enrf::emit_tune(tuned, config, filter_name, M, out_dir);
            std::printf("best alpha %.4g (rmse %.4g); wrote %s/tune.json\n",
                        tuned.best_alpha, tuned.best_rmse, out_dir.c_str());
        } else if (dof_cmd->parsed()) {
            const auto& entry = find_filter(config, "enrf_adapt");
            const auto trace = enrf::trace_dof(config, entry.spec, M);
            enrf::emit_dof_trace(trace, config, entry.spec.name, M, out_dir);
            std::printf("dof median %.4g [%.4g, %.4g]; wrote %s/dof_trace.json\n",
                        trace.median, trace.q05, trace.q95, out_dir.c_str());
        }
    } catch (const enrf::TuningError& e) {
        std::fprintf(stderr, "error: %s\n%s", e.what(), e.table().c_str());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
