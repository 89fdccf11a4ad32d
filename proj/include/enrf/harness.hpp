#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "enrf/config.hpp"
#include "enrf/dynamics.hpp"
#include "enrf/errors.hpp"
#include "enrf/estimation.hpp"
#include "enrf/filters.hpp"
#include "enrf/parallel.hpp"
#include "enrf/rng.hpp"
#include "enrf/tdist.hpp"
#include "enrf/transport.hpp"

namespace enrf {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// RMSE_t = ||mean(ensemble) - truth||_2 / sqrt(n) and
/// spread_t = sqrt(tr(Cov(ensemble)) / n) with the 1/(M-1) sample covariance.
inline std::pair<double, double> compute_metrics(const Eigen::MatrixXd& particles,
                                                 const Eigen::VectorXd& truth) {
    const Eigen::Index n = particles.rows();
    const Eigen::Index M = particles.cols();
    if (truth.size() != n) throw ArgumentError("compute_metrics: dimension mismatch");
    if (M < 2) throw ArgumentError("compute_metrics: need at least two particles");
    const Eigen::VectorXd mean = particles.rowwise().mean();
    const double rmse = (mean - truth).norm() / std::sqrt(static_cast<double>(n));
    const double trace_cov = (particles.colwise() - mean).squaredNorm() /
                             static_cast<double>(M - 1);
    const double spread = std::sqrt(trace_cov / static_cast<double>(n));
    return {rmse, spread};
}

inline double median_of(std::vector<double> v) {
    v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }),
            v.end());
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const size_t k = v.size() / 2;
    return v.size() % 2 == 1 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

inline double quantile_of(std::vector<double> v, double q) {
    v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }),
            v.end());
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline double mean_of(const std::vector<double>& v) {
    double sum = 0.0;
    int count = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            sum += x;
            ++count;
        }
    return count == 0 ? kNaN : sum / count;
}

/// Per-cycle metrics of one filter run plus trailing-window summaries.
struct MetricsSeries {
    std::vector<double> rmse, spread, dof_hat;
    bool diverged = false;
    int diverged_at = -1;  // 1-based cycle index of the divergence

    double rmse_mean = kNaN;      // temporal mean over the window
    double spread_median = kNaN;  // temporal median over the window
    double dof_median = kNaN;

    void summarize(int window) {
        if (diverged || rmse.empty()) return;
        const int count = std::min<int>(window, static_cast<int>(rmse.size()));
        const auto tail = [&](const std::vector<double>& v) {
            return std::vector<double>(v.end() - count, v.end());
        };
        rmse_mean = mean_of(tail(rmse));
        spread_median = median_of(tail(spread));
        dof_median = median_of(tail(dof_hat));
    }
};

namespace detail {

struct TruthData {
    std::vector<Eigen::VectorXd> states;
    std::vector<Eigen::VectorXd> observations;
};

/// Truth trajectory and observations; a function of (seed, realization) only,
/// so every filter sees the same data and nothing else leaks from the truth.
inline TruthData generate_truth(const ExperimentConfig& config, int realization) {
    const StateSpaceModel& model = config.model;
    RngStream rng(RngStream::derive({config.seed, fnv1a("truth"),
                                     static_cast<std::uint64_t>(realization)}));
    ForecastWorkspace ws(model);
    Eigen::VectorXd x = rng.normal_vector(model.state_dim());
    for (int b = 0; b < config.burn_in; ++b) x = forecast_step(model, x, rng, &ws);
    TruthData truth;
    truth.states.reserve(config.n_cycles);
    truth.observations.reserve(config.n_cycles);
    for (int t = 0; t < config.n_cycles; ++t) {
        x = forecast_step(model, x, rng, &ws);
        truth.states.push_back(x);
        truth.observations.push_back(observe(model, x, rng));
    }
    return truth;
}

/// Grid-search tlasso dof estimate from a free run of the model, used by the
/// Fixed and Refresh policies before assimilation begins.
inline double free_run_dof(const ExperimentConfig& config, const EnRFSpec& spec,
                           RngStream& rng) {
    const StateSpaceModel& model = config.model;
    const int steps = config.free_run_steps;
    Eigen::VectorXd x0 = rng.normal_vector(model.state_dim());
    const auto pairs = free_run(model, x0, steps, rng);
    const int d = model.obs_dim();
    const int n = model.state_dim();
    Eigen::MatrixXd joint(d + n, steps);
    for (int t = 0; t < steps; ++t) {
        joint.col(t).head(d) = pairs[t].first;
        joint.col(t).tail(n) = pairs[t].second;
    }
    TlassoConfig cfg;
    cfg.rho = spec.rho_coeff / std::sqrt(static_cast<double>(steps));
    cfg.dof_mode = DofMode::grid_search(spec.dof_grid.empty() ? default_dof_grid()
                                                              : spec.dof_grid);
    return tlasso(joint, cfg).dof;
}

}  // namespace detail

/// One twin-experiment run: shared truth per realization, filter-specific
/// stream, forecast/analysis loop with per-cycle metrics. Divergence
/// (non-finite particles, RMSE above the threshold, or a singular/stiff
/// analysis step) is recorded as a flag, not an exception.
inline MetricsSeries run_twin_experiment(const ExperimentConfig& config,
                                         const FilterSpec& filter, int M, int realization) {
    const StateSpaceModel& model = config.model;
    const int n = model.state_dim();
    const int d = model.obs_dim();
    const detail::TruthData truth = detail::generate_truth(config, realization);

    RngStream rng(RngStream::derive({config.seed, fnv1a(filter.name),
                                     static_cast<std::uint64_t>(M),
                                     static_cast<std::uint64_t>(realization)}));

    MetricsSeries series;
    series.rmse.reserve(config.n_cycles);
    series.spread.reserve(config.n_cycles);
    series.dof_hat.reserve(config.n_cycles);

    EnsembleState ens;
    ens.particles.resize(n, M);
    rng.fill_normal(ens.particles);

    std::optional<DofBuffer> buffer;
    if (const auto* e = std::get_if<EnRFSpec>(&filter.kind)) {
        if (e->policy == DofPolicyKind::FixedFromFreeRun ||
            e->policy == DofPolicyKind::Refresh) {
            double nu0 = kGaussianDof;
            try {
                nu0 = detail::free_run_dof(config, *e, rng);
            } catch (const SingularError&) {
                series.diverged = true;
                series.diverged_at = 0;
                return series;
            }
            const int capacity =
                e->policy == DofPolicyKind::Refresh ? e->buffer_capacity : 2;
            buffer.emplace(d + n, capacity, nu0);
        }
    }

    RingGeometry geometry;
    geometry.ring_size = n;
    for (int i = 0; i < n; ++i) geometry.row_positions.push_back(i);
    geometry.col_positions = observed_indices(model);

    ForecastWorkspace ws(model);
    const LikelihoodSampler sampler = [&model](const Eigen::VectorXd& x, RngStream& r) {
        return observe(model, x, r);
    };

    for (int t = 1; t <= config.n_cycles; ++t) {
        double dof_hat = kNaN;
        try {
            for (int i = 0; i < M; ++i)
                ens.particles.col(i) = forecast_step(model, ens.particles.col(i), rng, &ws);
            ens.time_index = t;
            const Eigen::VectorXd& y_star = truth.observations[t - 1];

            if (const auto* s = std::get_if<SEnKFSpec>(&filter.kind)) {
                if (s->inflation != 1.0) ens = apply_inflation(ens, s->inflation);
                Eigen::MatrixXd synth(d, M);
                for (int i = 0; i < M; ++i)
                    synth.col(i) = observe(model, ens.particles.col(i), rng);
                ens = senkf_analysis(ens, synth, y_star, *s, &geometry);
            } else if (const auto* g = std::get_if<SEnKFGlassoSpec>(&filter.kind)) {
                if (g->inflation != 1.0) ens = apply_inflation(ens, g->inflation);
                Eigen::MatrixXd synth(d, M);
                for (int i = 0; i < M; ++i)
                    synth.col(i) = observe(model, ens.particles.col(i), rng);
                ens = senkf_glasso_analysis(ens, synth, y_star, *g);
            } else {
                const auto& e = std::get<EnRFSpec>(filter.kind);
                ens = enrf_analysis(ens, sampler, y_star, e,
                                    buffer ? &*buffer : nullptr, rng, &dof_hat);
            }
        } catch (const SingularError&) {
            series.diverged = true;
        } catch (const ConvergenceError&) {
            series.diverged = true;
        } catch (const StiffnessError&) {
            series.diverged = true;
        }

        if (!series.diverged) {
            if (!ens.particles.allFinite()) {
                series.diverged = true;
            } else {
                const auto [rmse, spread] = compute_metrics(ens.particles, truth.states[t - 1]);
                series.rmse.push_back(rmse);
                series.spread.push_back(spread);
                series.dof_hat.push_back(dof_hat);
                if (!(rmse <= config.divergence_rmse)) series.diverged = true;
            }
        }
        if (series.diverged) {
            series.diverged_at = t;
            break;
        }
    }
    series.summarize(config.metrics_window);
    return series;
}

struct TuneRow {
    double alpha = kNaN;
    double radius = kNaN;
    double rmse_mean = kNaN;
    double spread_median = kNaN;
    int n_diverged = 0;
};

struct TuneResult {
    double best_alpha = kNaN;
    double best_radius = kNaN;
    double best_rmse = kNaN;
    double best_spread = kNaN;
    std::vector<TuneRow> table;
};

namespace detail {

inline FilterSpec with_knobs(const FilterSpec& base, double alpha, double radius) {
    FilterSpec spec = base;
    if (auto* s = std::get_if<SEnKFSpec>(&spec.kind)) {
        s->inflation = alpha;
        if (!std::isnan(radius)) s->loc_radius = radius;
    } else if (auto* g = std::get_if<SEnKFGlassoSpec>(&spec.kind)) {
        g->inflation = alpha;
    }
    return spec;
}

inline std::string tune_table_to_string(const std::vector<TuneRow>& table) {
    std::string out = "alpha,radius,rmse_mean,spread_median,n_diverged\n";
    char buf[160];
    for (const auto& r : table) {
        std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%.6g,%.6g,%d\n", r.alpha, r.radius,
                      r.rmse_mean, r.spread_median, r.n_diverged);
        out += buf;
    }
    return out;
}

/// Shared engine for inflation (and optionally radius) tuning: evaluates
/// every grid cell over all realizations and picks the smallest average
/// RMSE, ties toward smaller alpha (grids are traversed in ascending order).
inline TuneResult tune_grid(const ExperimentConfig& config, const FilterSpec& base, int M,
                            std::vector<double> alphas, std::vector<double> radii) {
    std::sort(alphas.begin(), alphas.end());
    const int na = static_cast<int>(alphas.size());
    const int nr = static_cast<int>(radii.size());
    const int cells = na * nr;
    std::vector<std::vector<MetricsSeries>> runs(cells);
    for (auto& r : runs) r.resize(config.n_realizations);

    parallel_for(cells * config.n_realizations, config.threads, [&](int idx) {
        const int cell = idx / config.n_realizations;
        const int realization = idx % config.n_realizations;
        const double alpha = alphas[cell % na];
        const double radius = radii[cell / na];
        const FilterSpec spec = with_knobs(base, alpha, radius);
        runs[cell][realization] = run_twin_experiment(config, spec, M, realization);
    });

    TuneResult result;
    for (int cell = 0; cell < cells; ++cell) {
        TuneRow row;
        row.alpha = alphas[cell % na];
        row.radius = radii[cell / na];
        std::vector<double> rmses, spreads;
        for (const auto& series : runs[cell]) {
            if (series.diverged) {
                ++row.n_diverged;
            } else {
                rmses.push_back(series.rmse_mean);
                spreads.push_back(series.spread_median);
            }
        }
        row.rmse_mean = mean_of(rmses);
        row.spread_median = median_of(spreads);
        result.table.push_back(row);
        if (!std::isnan(row.rmse_mean) &&
            (std::isnan(result.best_rmse) || row.rmse_mean < result.best_rmse)) {
            result.best_rmse = row.rmse_mean;
            result.best_spread = row.spread_median;
            result.best_alpha = row.alpha;
            result.best_radius = row.radius;
        }
    }
    if (std::isnan(result.best_rmse))
        throw TuningError("tune: every run diverged",
                          tune_table_to_string(result.table));
    return result;
}

}  // namespace detail

/// Tune the multiplicative inflation over the configured grid (a subset of
/// [0.95, 1.10]); returns the RMSE-optimal alpha, the spread at that alpha,
/// and the full table.
inline TuneResult tune_inflation(const ExperimentConfig& config, const FilterSpec& filter,
                                 int M) {
    return detail::tune_grid(config, filter, M, config.resolved_inflation_grid(), {kNaN});
}

/// Tune whichever knobs the entry exposes: inflation, and for a localized
/// sEnKF also the Gaspari-Cohn radius.
inline TuneResult tune_filter(const ExperimentConfig& config, const FilterEntry& entry,
                              int M) {
    std::vector<double> alphas =
        entry.tune_inflation ? config.resolved_inflation_grid() : std::vector<double>{kNaN};
    if (!entry.tune_inflation) {
        if (const auto* s = std::get_if<SEnKFSpec>(&entry.spec.kind)) alphas = {s->inflation};
        if (const auto* g = std::get_if<SEnKFGlassoSpec>(&entry.spec.kind))
            alphas = {g->inflation};
    }
    std::vector<double> radii = entry.tune_localization
                                    ? config.resolved_localization_grid()
                                    : std::vector<double>{kNaN};
    return detail::tune_grid(config, entry.spec, M, alphas, radii);
}

struct SweepCell {
    std::string filter;
    int M = 0;
    double tuned_alpha = kNaN;
    double tuned_radius = kNaN;
    std::vector<MetricsSeries> runs;  // per realization
    double rmse_mean = kNaN;
    double spread_median = kNaN;
    double dof_median = kNaN;
    int n_diverged = 0;
};

struct SweepResult {
    std::vector<SweepCell> cells;
};

namespace detail {

inline void aggregate_cell(SweepCell& cell) {
    std::vector<double> rmses, spreads, dofs;
    for (const auto& series : cell.runs) {
        if (series.diverged) {
            ++cell.n_diverged;
        } else {
            rmses.push_back(series.rmse_mean);
            spreads.push_back(series.spread_median);
            dofs.push_back(series.dof_median);
        }
    }
    cell.rmse_mean = mean_of(rmses);
    cell.spread_median = median_of(spreads);
    cell.dof_median = median_of(dofs);
}

}  // namespace detail

/// For every (filter, M) pair: tune the tunable knobs, run all realizations
/// at the chosen setting, and aggregate (mean time-averaged RMSE, median
/// spread, median dof, divergence count). Rows are ordered by configured
/// filter order then ascending M. Fully diverged tuning is recorded in the
/// cell rather than aborting the sweep.
inline SweepResult sweep_ensemble_sizes(const ExperimentConfig& config) {
    std::vector<int> sizes = config.ensemble_sizes;
    std::sort(sizes.begin(), sizes.end());

    SweepResult result;
    for (const auto& entry : config.filters) {
        for (int M : sizes) {
            SweepCell cell;
            cell.filter = entry.spec.name;
            cell.M = M;
            FilterSpec spec = entry.spec;
            bool tuned_ok = true;
            if (entry.tune_inflation || entry.tune_localization) {
                try {
                    const TuneResult tuned = tune_filter(config, entry, M);
                    cell.tuned_alpha = tuned.best_alpha;
                    cell.tuned_radius = tuned.best_radius;
                    spec = detail::with_knobs(spec, tuned.best_alpha, tuned.best_radius);
                } catch (const TuningError&) {
                    tuned_ok = false;
                    cell.n_diverged = config.n_realizations;
                }
            }
            if (tuned_ok) {
                cell.runs.resize(config.n_realizations);
                parallel_for(config.n_realizations, config.threads, [&](int r) {
                    cell.runs[r] = run_twin_experiment(config, spec, M, r);
                });
                detail::aggregate_cell(cell);
            }
            result.cells.push_back(std::move(cell));
        }
    }
    return result;
}

struct DofTraceResult {
    std::vector<double> cycle_median, cycle_q05, cycle_q95;  // across realizations
    double median = kNaN, q05 = kNaN, q95 = kNaN;  // pooled over window x realizations
    std::vector<MetricsSeries> runs;
};

/// Per-cycle dof-hat trace of an adaptive EnRF: median and 5/95% quantiles
/// across realizations, plus pooled statistics over the trailing window.
inline DofTraceResult trace_dof(const ExperimentConfig& config, const FilterSpec& filter,
                                int M) {
    const auto* e = std::get_if<EnRFSpec>(&filter.kind);
    if (e == nullptr || e->policy != DofPolicyKind::Adapt)
        throw ArgumentError("trace_dof: filter must be an adaptive EnRF");

    DofTraceResult result;
    result.runs.resize(config.n_realizations);
    parallel_for(config.n_realizations, config.threads, [&](int r) {
        result.runs[r] = run_twin_experiment(config, filter, M, r);
    });

    result.cycle_median.resize(config.n_cycles, kNaN);
    result.cycle_q05.resize(config.n_cycles, kNaN);
    result.cycle_q95.resize(config.n_cycles, kNaN);
    std::vector<double> pooled;
    for (int t = 0; t < config.n_cycles; ++t) {
        std::vector<double> at_cycle;
        for (const auto& run : result.runs)
            if (!run.diverged && t < static_cast<int>(run.dof_hat.size()))
                at_cycle.push_back(run.dof_hat[t]);
        result.cycle_median[t] = median_of(at_cycle);
        result.cycle_q05[t] = quantile_of(at_cycle, 0.05);
        result.cycle_q95[t] = quantile_of(at_cycle, 0.95);
        if (t >= config.n_cycles - config.metrics_window)
            for (double v : at_cycle) pooled.push_back(v);
    }
    result.median = median_of(pooled);
    result.q05 = quantile_of(pooled, 0.05);
    result.q95 = quantile_of(pooled, 0.95);
    return result;
}

struct ConvergenceCell {
    int M = 0;
    std::vector<double> enkf_mean_err, enrf_mean_err;  // per replicate
    std::vector<double> enkf_cov_err, enrf_cov_err;
    double enkf_mean_avg = kNaN, enrf_mean_avg = kNaN;
    double enkf_cov_avg = kNaN, enrf_cov_avg = kNaN;
};

struct ConvergenceResult {
    int n = 0, d = 0;
    double nu = 0.0;
    int replicates = 0;
    std::vector<ConvergenceCell> cells;
};

/// Synthetic analysis-step convergence study on a standard joint
/// t-distribution: for each ensemble size and replicate, draw joint samples
/// and an observation realization, push the prior samples through the
/// empirical Kalman map (sample mean/covariance) and through the EnRF map
/// (tlasso estimates at the true dof), and compare the posterior sample
/// mean/covariance against the closed-form conditional.
inline ConvergenceResult convergence_study(int n, int d, double nu, std::vector<int> m_grid,
                                           int replicates, std::uint64_t seed,
                                           double rho_coeff = 0.5, int threads = 0) {
    std::sort(m_grid.begin(), m_grid.end());
    ConvergenceResult result;
    result.n = n;
    result.d = d;
    result.nu = nu;
    result.replicates = replicates;

    const int m = d + n;
    const TDist joint_dist(Eigen::VectorXd::Zero(m), Eigen::MatrixXd::Identity(m, m), nu);
    const JointSplit joint(joint_dist, d);
    const TDist marginal_y(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d), nu);

    for (int M : m_grid) {
        ConvergenceCell cell;
        cell.M = M;
        cell.enkf_mean_err.resize(replicates);
        cell.enrf_mean_err.resize(replicates);
        cell.enkf_cov_err.resize(replicates);
        cell.enrf_cov_err.resize(replicates);

        parallel_for(replicates, threads, [&](int rep) {
            RngStream rng(RngStream::derive({seed, fnv1a("convergence"),
                                             static_cast<std::uint64_t>(M),
                                             static_cast<std::uint64_t>(rep)}));
            const Eigen::MatrixXd samples = sample(joint_dist, M, rng);
            const Eigen::VectorXd y_star = sample(marginal_y, 1, rng).col(0);

            const auto [mu_true, cov_true] = moments(condition(joint, y_star));
            const double root_n = std::sqrt(static_cast<double>(n));
            const auto errors = [&](const Eigen::MatrixXd& posterior) {
                const Eigen::VectorXd mu = posterior.rowwise().mean();
                const Eigen::MatrixXd centered = posterior.colwise() - mu;
                const Eigen::MatrixXd cov = symmetrize(
                    centered * centered.transpose() / static_cast<double>(M - 1));
                return std::make_pair((mu - mu_true).norm() / root_n,
                                      (cov - cov_true).norm() / root_n);
            };

            const Eigen::MatrixXd obs = samples.topRows(d);
            const Eigen::MatrixXd states = samples.bottomRows(n);

            // Empirical Kalman route: sample mean/covariance, dof = inf map.
            {
                const Eigen::VectorXd mean = samples.rowwise().mean();
                const Eigen::MatrixXd centered = samples.colwise() - mean;
                const Eigen::MatrixXd cov = symmetrize(
                    centered * centered.transpose() / static_cast<double>(M - 1));
                const JointSplit emp(TDist(mean, cov, kGaussianDof), d);
                const AnalysisMapT map = build_analysis_map(emp);
                const auto [me, ce] =
                    errors(apply_analysis_ensemble(map, y_star, obs, states));
                cell.enkf_mean_err[rep] = me;
                cell.enkf_cov_err[rep] = ce;
            }
            // Robust route: tlasso at the true dof, alpha-scaled map.
            {
                TlassoConfig cfg;
                cfg.rho = rho_coeff / std::sqrt(static_cast<double>(M));
                cfg.dof_mode = DofMode::fixed(nu);
                cfg.track_loglik = false;
                const TlassoResult fit = tlasso(samples, cfg);
                const JointSplit est(TDist(fit.mean, fit.scale, fit.dof), d);
                const AnalysisMapT map = build_analysis_map(est);
                const auto [me, ce] =
                    errors(apply_analysis_ensemble(map, y_star, obs, states));
                cell.enrf_mean_err[rep] = me;
                cell.enrf_cov_err[rep] = ce;
            }
        });

        cell.enkf_mean_avg = mean_of(cell.enkf_mean_err);
        cell.enrf_mean_avg = mean_of(cell.enrf_mean_err);
        cell.enkf_cov_avg = mean_of(cell.enkf_cov_err);
        cell.enrf_cov_avg = mean_of(cell.enrf_cov_err);
        result.cells.push_back(std::move(cell));
    }
    return result;
}

}  // namespace enrf
