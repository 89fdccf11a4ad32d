#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "enrf/config.hpp"
#include "enrf/harness.hpp"
#include "enrf/outputs.hpp"

namespace enrf {

using ordered_json = nlohmann::ordered_json;

namespace detail {

inline ordered_json json_number(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

inline void append_run_rows(std::string& out, const std::string& filter, int M,
                            int realization, const MetricsSeries& series) {
    char buf[256];
    const int recorded = static_cast<int>(series.rmse.size());
    for (int t = 0; t < recorded; ++t) {
        const bool mark = series.diverged && series.diverged_at == t + 1;
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%s,%s,%s,%d\n", filter.c_str(), M,
                      realization, t + 1, format_value(series.rmse[t]).c_str(),
                      format_value(series.spread[t]).c_str(),
                      format_value(series.dof_hat[t]).c_str(), mark ? 1 : 0);
        out += buf;
    }
    if (series.diverged && series.diverged_at > recorded) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,,,,1\n", filter.c_str(), M, realization,
                      series.diverged_at);
        out += buf;
    }
}

}  // namespace detail

/// Per-cycle rows for every run of a sweep; schema
/// filter,M,realization,cycle,rmse,spread,dof_hat,diverged.
inline std::string metrics_csv(const SweepResult& sweep) {
    std::string out = "filter,M,realization,cycle,rmse,spread,dof_hat,diverged\n";
    for (const auto& cell : sweep.cells)
        for (size_t r = 0; r < cell.runs.size(); ++r)
            detail::append_run_rows(out, cell.filter, cell.M, static_cast<int>(r),
                                    cell.runs[r]);
    return out;
}

/// Aggregates keyed by "filter/M".
inline ordered_json summary_json(const SweepResult& sweep, const ExperimentConfig& config) {
    ordered_json echo = ordered_json::object();
    for (const auto& [k, v] : config.echo) echo[k] = v;
    ordered_json out = ordered_json::object();
    for (const auto& cell : sweep.cells) {
        ordered_json entry = ordered_json::object();
        entry["rmse_mean"] = detail::json_number(cell.rmse_mean);
        entry["spread_median"] = detail::json_number(cell.spread_median);
        entry["dof_median"] = detail::json_number(cell.dof_median);
        entry["n_diverged"] = cell.n_diverged;
        entry["config_echo"] = echo;
        entry["seed"] = config.seed;
        out[cell.filter + "/" + std::to_string(cell.M)] = std::move(entry);
    }
    return out;
}

inline std::string sweep_plots_svg(const SweepResult& sweep) {
    SvgChart rmse_chart("Time-averaged RMSE vs ensemble size", "M", "RMSE");
    SvgChart spread_chart("Median spread vs ensemble size", "M", "spread");
    std::vector<std::string> filters;
    for (const auto& cell : sweep.cells)
        if (std::find(filters.begin(), filters.end(), cell.filter) == filters.end())
            filters.push_back(cell.filter);
    for (const auto& f : filters) {
        std::vector<double> ms, rmses, spreads;
        for (const auto& cell : sweep.cells)
            if (cell.filter == f) {
                ms.push_back(cell.M);
                rmses.push_back(cell.rmse_mean);
                spreads.push_back(cell.spread_median);
            }
        rmse_chart.add_series(f, ms, rmses);
        spread_chart.add_series(f, ms, spreads);
    }
    std::string out =
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"840\">\n";
    out += "<svg y=\"0\">" + rmse_chart.render() + "</svg>\n";
    out += "<svg y=\"420\">" + spread_chart.render() + "</svg>\n";
    out += "</svg>\n";
    return out;
}

/// Write metrics.csv + summary.json (+ plots.svg when enabled).
inline void emit_outputs(const SweepResult& sweep, const ExperimentConfig& config,
                         const std::string& out_dir) {
    write_text_file(out_dir + "/metrics.csv", metrics_csv(sweep));
    write_text_file(out_dir + "/summary.json", summary_json(sweep, config).dump(2) + "\n");
    if (config.plots) write_text_file(out_dir + "/plots.svg", sweep_plots_svg(sweep));
}

inline void emit_tune(const TuneResult& tuned, const ExperimentConfig& config,
                      const std::string& filter, int M, const std::string& out_dir) {
    std::string csv = "alpha,radius,rmse_mean,spread_median,n_diverged\n";
    char buf[200];
    for (const auto& row : tuned.table) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%d\n", format_value(row.alpha).c_str(),
                      format_value(row.radius).c_str(), format_value(row.rmse_mean).c_str(),
                      format_value(row.spread_median).c_str(), row.n_diverged);
        csv += buf;
    }
    write_text_file(out_dir + "/tune.csv", csv);
    ordered_json j = ordered_json::object();
    j["filter"] = filter;
    j["M"] = M;
    j["best_alpha"] = detail::json_number(tuned.best_alpha);
    j["best_radius"] = detail::json_number(tuned.best_radius);
    j["best_rmse"] = detail::json_number(tuned.best_rmse);
    j["best_spread"] = detail::json_number(tuned.best_spread);
    j["seed"] = config.seed;
    write_text_file(out_dir + "/tune.json", j.dump(2) + "\n");
}

inline void emit_dof_trace(const DofTraceResult& trace, const ExperimentConfig& config,
                           const std::string& filter, int M, const std::string& out_dir) {
    std::string csv = "cycle,dof_median,dof_q05,dof_q95\n";
    char buf[160];
    for (size_t t = 0; t < trace.cycle_median.size(); ++t) {
        std::snprintf(buf, sizeof(buf), "%zu,%s,%s,%s\n", t + 1,
                      format_value(trace.cycle_median[t]).c_str(),
                      format_value(trace.cycle_q05[t]).c_str(),
                      format_value(trace.cycle_q95[t]).c_str());
        csv += buf;
    }
    write_text_file(out_dir + "/dof_trace.csv", csv);

    SweepResult as_sweep;
    SweepCell cell;
    cell.filter = filter;
    cell.M = M;
    cell.runs = trace.runs;
    detail::aggregate_cell(cell);
    as_sweep.cells.push_back(std::move(cell));
    write_text_file(out_dir + "/metrics.csv", metrics_csv(as_sweep));

    ordered_json j = ordered_json::object();
    j["filter"] = filter;
    j["M"] = M;
    j["dof_median"] = detail::json_number(trace.median);
    j["dof_q05"] = detail::json_number(trace.q05);
    j["dof_q95"] = detail::json_number(trace.q95);
    ordered_json echo = ordered_json::object();
    for (const auto& [k, v] : config.echo) echo[k] = v;
    j["config_echo"] = echo;
    j["seed"] = config.seed;
    write_text_file(out_dir + "/dof_trace.json", j.dump(2) + "\n");

    if (config.plots) {
        SvgChart chart("Estimated degree of freedom", "cycle", "dof");
        std::vector<double> cycles(trace.cycle_median.size());
        for (size_t t = 0; t < cycles.size(); ++t) cycles[t] = static_cast<double>(t + 1);
        chart.add_series("median", cycles, trace.cycle_median);
        chart.add_series("q05", cycles, trace.cycle_q05);
        chart.add_series("q95", cycles, trace.cycle_q95);
        write_text_file(out_dir + "/plots.svg", chart.render());
    }
}

inline void emit_convergence(const ConvergenceResult& result, std::uint64_t seed,
                             bool plots, const std::string& out_dir) {
    std::string csv = "M,replicate,enkf_mean_err,enrf_mean_err,enkf_cov_err,enrf_cov_err\n";
    char buf[240];
    for (const auto& cell : result.cells)
        for (int rep = 0; rep < result.replicates; ++rep) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%s,%s,%s,%s\n", cell.M, rep,
                          format_exact(cell.enkf_mean_err[rep]).c_str(),
                          format_exact(cell.enrf_mean_err[rep]).c_str(),
                          format_exact(cell.enkf_cov_err[rep]).c_str(),
                          format_exact(cell.enrf_cov_err[rep]).c_str());
            csv += buf;
        }
    write_text_file(out_dir + "/convergence.csv", csv);

    ordered_json j = ordered_json::object();
    j["n"] = result.n;
    j["d"] = result.d;
    j["nu"] = result.nu;
    j["replicates"] = result.replicates;
    j["seed"] = seed;
    ordered_json cells = ordered_json::array();
    for (const auto& cell : result.cells) {
        ordered_json c = ordered_json::object();
        c["M"] = cell.M;
        c["enkf_mean_avg"] = detail::json_number(cell.enkf_mean_avg);
        c["enrf_mean_avg"] = detail::json_number(cell.enrf_mean_avg);
        c["enkf_cov_avg"] = detail::json_number(cell.enkf_cov_avg);
        c["enrf_cov_avg"] = detail::json_number(cell.enrf_cov_avg);
        cells.push_back(std::move(c));
    }
    j["cells"] = std::move(cells);
    write_text_file(out_dir + "/convergence_summary.json", j.dump(2) + "\n");

    if (plots) {
        SvgChart mean_chart("Posterior mean error vs ensemble size", "M", "mean error");
        SvgChart cov_chart("Posterior covariance error vs ensemble size", "M", "cov error");
        std::vector<double> ms, ek, er, ck, cr;
        for (const auto& cell : result.cells) {
            ms.push_back(cell.M);
            ek.push_back(cell.enkf_mean_avg);
            er.push_back(cell.enrf_mean_avg);
            ck.push_back(cell.enkf_cov_avg);
            cr.push_back(cell.enrf_cov_avg);
        }
        mean_chart.add_series("EnKF", ms, ek);
        mean_chart.add_series("EnRF", ms, er);
        cov_chart.add_series("EnKF", ms, ck);
        cov_chart.add_series("EnRF", ms, cr);
        std::string out =
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"840\">\n";
        out += "<svg y=\"0\">" + mean_chart.render() + "</svg>\n";
        out += "<svg y=\"420\">" + cov_chart.render() + "</svg>\n";
        out += "</svg>\n";
        write_text_file(out_dir + "/plots.svg", out);
    }
}

}  // namespace enrf
