#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "enrf/dynamics.hpp"
#include "enrf/errors.hpp"
#include "enrf/estimation.hpp"
#include "enrf/filters.hpp"

namespace enrf {

/// One filter to evaluate, plus which of its knobs the harness tunes.
struct FilterEntry {
    FilterSpec spec;
    bool tune_inflation = false;
    bool tune_localization = false;
};

/// Declarative twin-experiment description; mirrors the flat config file
/// keys one-to-one.
struct ExperimentConfig {
    StateSpaceModel model;
    std::vector<FilterEntry> filters;
    std::vector<int> ensemble_sizes{100};
    int n_cycles = 2000;
    int n_realizations = 10;
    std::uint64_t seed = 0;
    int metrics_window = 1000;
    std::string out_dir = "out";
    std::vector<double> inflation_grid;     // empty selects 16 points on [0.95, 1.10]
    std::vector<double> localization_grid;  // radii; inf = no localization
    int burn_in = 0;
    int free_run_steps = 500;
    double rho_coeff = 0.5;
    std::vector<double> dof_grid;  // empty selects the default grid
    int refresh_interval = 20;
    int buffer_capacity = 500;
    double enrf_const_dof = 100.0;
    bool hybrid_kalman = false;
    int threads = 0;  // 0 = hardware concurrency
    bool plots = false;
    double divergence_rmse = 1e3;

    std::map<std::string, std::string> echo;  // resolved key/value pairs

    void validate() const {
        model.validate();
        if (metrics_window < 1 || n_cycles <= metrics_window)
            throw ArgumentError("config: need n_cycles > metrics_window >= 1");
        if (filters.empty()) throw ArgumentError("config: no filters configured");
        if (ensemble_sizes.empty()) throw ArgumentError("config: no ensemble sizes");
        for (int m : ensemble_sizes)
            if (m < 2) throw ArgumentError("config: ensemble sizes must be >= 2");
        if (n_realizations < 1) throw ArgumentError("config: n_realizations must be >= 1");
        for (double a : inflation_grid)
            if (a < 0.95 || a > 1.10)
                throw ArgumentError("config: inflation grid must lie in [0.95, 1.10]");
        for (const auto& f : filters) f.spec.validate();
    }

    std::vector<double> resolved_inflation_grid() const {
        if (!inflation_grid.empty()) return inflation_grid;
        std::vector<double> grid(16);
        for (int i = 0; i < 16; ++i) grid[i] = 0.95 + 0.15 * i / 15.0;
        return grid;
    }
    std::vector<double> resolved_localization_grid() const {
        if (!localization_grid.empty()) return localization_grid;
        return {1, 2, 3, 4, 5, kNoLocalization};
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
    if (v == "inf" || v == "infinity") return std::numeric_limits<double>::infinity();
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ArgumentError("config: bad numeric value for '" + key + "': " + v);
    }
}

inline long parse_int(const std::string& key, const std::string& v) {
    if (v == "inf") return std::numeric_limits<int>::max();
    try {
        size_t pos = 0;
        const long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ArgumentError("config: bad integer value for '" + key + "': " + v);
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ArgumentError("config: bad boolean value for '" + key + "': " + v);
}

}  // namespace detail

/// Parse the flat key/value config text. Unknown keys are errors.
inline ExperimentConfig parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ArgumentError("config: line " + std::to_string(lineno) +
                                " is not 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (kv.count(key))
            throw ArgumentError("config: duplicate key '" + key + "'");
        kv[key] = value;
    }

    ExperimentConfig cfg;
    Lorenz63Params l63;
    Lorenz96Params l96;
    std::string model_name = "lorenz63";
    std::string obs_operator = "identity";
    std::string obs_noise = "gaussian";
    std::string inflation_mode = "tune";
    std::string senkf_localization = "none";
    std::vector<std::string> filter_names = {"senkf"};

    for (const auto& [key, value] : kv) {
        if (key == "model") model_name = value;
        else if (key == "dt_obs") cfg.model.dt_obs = detail::parse_real(key, value);
        else if (key == "process_noise_var") cfg.model.process_noise_var = detail::parse_real(key, value);
        else if (key == "obs_operator") obs_operator = value;
        else if (key == "obs_noise") obs_noise = value;
        else if (key == "obs_noise_scale_sq") cfg.model.obs_noise_scale_sq = detail::parse_real(key, value);
        else if (key == "obs_noise_dof") cfg.model.obs_noise_dof = detail::parse_real(key, value);
        else if (key == "integrator_abs_tol") cfg.model.integrator_abs_tol = detail::parse_real(key, value);
        else if (key == "integrator_rel_tol") cfg.model.integrator_rel_tol = detail::parse_real(key, value);
        else if (key == "lorenz63_sigma") l63.sigma = detail::parse_real(key, value);
        else if (key == "lorenz63_beta") l63.beta = detail::parse_real(key, value);
        else if (key == "lorenz63_rho") l63.rho = detail::parse_real(key, value);
        else if (key == "lorenz96_n") l96.n = static_cast<int>(detail::parse_int(key, value));
        else if (key == "lorenz96_forcing") l96.forcing = detail::parse_real(key, value);
        else if (key == "burn_in") cfg.burn_in = static_cast<int>(detail::parse_int(key, value));
        else if (key == "filters") filter_names = detail::split_list(value);
        else if (key == "ensemble_sizes") {
            cfg.ensemble_sizes.clear();
            for (const auto& v : detail::split_list(value))
                cfg.ensemble_sizes.push_back(static_cast<int>(detail::parse_int(key, v)));
        } else if (key == "n_cycles") cfg.n_cycles = static_cast<int>(detail::parse_int(key, value));
        else if (key == "n_realizations") cfg.n_realizations = static_cast<int>(detail::parse_int(key, value));
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(detail::parse_int(key, value));
        else if (key == "metrics_window") cfg.metrics_window = static_cast<int>(detail::parse_int(key, value));
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "inflation_grid") {
            for (const auto& v : detail::split_list(value))
                cfg.inflation_grid.push_back(detail::parse_real(key, v));
        } else if (key == "localization_grid") {
            for (const auto& v : detail::split_list(value))
                cfg.localization_grid.push_back(detail::parse_real(key, v));
        } else if (key == "rho_coeff") cfg.rho_coeff = detail::parse_real(key, value);
        else if (key == "dof_grid") {
            for (const auto& v : detail::split_list(value))
                cfg.dof_grid.push_back(detail::parse_real(key, v));
        } else if (key == "refresh_interval") cfg.refresh_interval = static_cast<int>(detail::parse_int(key, value));
        else if (key == "buffer_capacity") cfg.buffer_capacity = static_cast<int>(detail::parse_int(key, value));
        else if (key == "free_run_steps") cfg.free_run_steps = static_cast<int>(detail::parse_int(key, value));
        else if (key == "enrf_const_dof") cfg.enrf_const_dof = detail::parse_real(key, value);
        else if (key == "inflation_mode") inflation_mode = value;
        else if (key == "senkf_localization") senkf_localization = value;
        else if (key == "hybrid_kalman") cfg.hybrid_kalman = detail::parse_bool(key, value);
        else if (key == "threads") cfg.threads = static_cast<int>(detail::parse_int(key, value));
        else if (key == "plots") cfg.plots = detail::parse_bool(key, value);
        else if (key == "divergence_rmse") cfg.divergence_rmse = detail::parse_real(key, value);
        else throw ArgumentError("config: unknown key '" + key + "'");
    }

    if (model_name == "lorenz63") {
        cfg.model.rhs = l63;
    } else if (model_name == "lorenz96") {
        cfg.model.rhs = l96;
    } else {
        throw ArgumentError("config: unknown model '" + model_name + "'");
    }
    if (obs_operator == "identity") cfg.model.obs_operator = ObsOperator::Identity;
    else if (obs_operator == "every_other") cfg.model.obs_operator = ObsOperator::EveryOther;
    else throw ArgumentError("config: unknown obs_operator '" + obs_operator + "'");
    if (obs_noise == "gaussian") cfg.model.obs_noise_kind = ObsNoiseKind::Gaussian;
    else if (obs_noise == "student_t") cfg.model.obs_noise_kind = ObsNoiseKind::StudentT;
    else throw ArgumentError("config: unknown obs_noise '" + obs_noise + "'");

    const bool tune_inflation = inflation_mode == "tune";
    double fixed_inflation = 1.0;
    if (!tune_inflation) fixed_inflation = detail::parse_real("inflation_mode", inflation_mode);

    for (const auto& name : filter_names) {
        FilterEntry entry;
        entry.spec.name = name;
        if (name == "senkf") {
            SEnKFSpec s;
            s.inflation = fixed_inflation;
            entry.tune_inflation = tune_inflation;
            if (senkf_localization == "tune") {
                entry.tune_localization = true;
            } else if (senkf_localization != "none") {
                s.loc_radius = detail::parse_real("senkf_localization", senkf_localization);
            }
            entry.spec.kind = s;
        } else if (name == "senkf_glasso") {
            SEnKFGlassoSpec s;
            s.inflation = fixed_inflation;
            s.rho_coeff = cfg.rho_coeff;
            entry.tune_inflation = tune_inflation;
            entry.spec.kind = s;
        } else {
            EnRFSpec s;
            s.rho_coeff = cfg.rho_coeff;
            s.refresh_interval = cfg.refresh_interval;
            s.buffer_capacity = cfg.buffer_capacity;
            s.dof_grid = cfg.dof_grid;
            s.hybrid_kalman_reversion = cfg.hybrid_kalman;
            if (name == "enrf_nu100") {
                s.policy = DofPolicyKind::Const;
                s.const_dof = 100.0;
            } else if (name == "enrf_const") {
                s.policy = DofPolicyKind::Const;
                s.const_dof = cfg.enrf_const_dof;
            } else if (name == "enrf_fixed") {
                s.policy = DofPolicyKind::FixedFromFreeRun;
            } else if (name == "enrf_refresh") {
                s.policy = DofPolicyKind::Refresh;
            } else if (name == "enrf_adapt") {
                s.policy = DofPolicyKind::Adapt;
            } else {
                throw ArgumentError("config: unknown filter '" + name + "'");
            }
            entry.spec.kind = s;
        }
        cfg.filters.push_back(entry);
    }

    cfg.echo = kv;
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace enrf
