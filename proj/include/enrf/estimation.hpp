#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "enrf/errors.hpp"
#include "enrf/linalg.hpp"
#include "enrf/special.hpp"
#include "enrf/tdist.hpp"

namespace enrf {

enum class ScaleNormalization { OneOverM, OneOverMMinus1 };

/// Degree-of-freedom handling inside tlasso.
struct DofMode {
    enum class Kind { Fixed, GridSearch, RootUpdate };
    Kind kind = Kind::Fixed;
    double fixed_dof = kGaussianDof;
    std::vector<double> grid;

    static DofMode fixed(double nu) { return {Kind::Fixed, nu, {}}; }
    static DofMode grid_search(std::vector<double> candidates) {
        return {Kind::GridSearch, 0.0, std::move(candidates)};
    }
    static DofMode root_update() { return {Kind::RootUpdate, 0.0, {}}; }
};

/// Candidates resolve the range of dof values seen in chaotic twin
/// experiments (roughly 3 to 30) while still covering the Gaussian limit.
inline std::vector<double> default_dof_grid() {
    return {3, 4, 5, 6, 8, 10, 15, 20, 30, 50, 100, kGaussianDof};
}

struct TlassoConfig {
    double rho = 0.0;  // l1 penalty on off-diagonal precision entries
    DofMode dof_mode = DofMode::fixed(kGaussianDof);
    int max_em_iters = 200;
    double em_tol = 1e-6;
    int glasso_max_iters = 100;
    double glasso_tol = 1e-6;
    ScaleNormalization scale_normalization = ScaleNormalization::OneOverM;
    double root_update_init_dof = 10.0;
    bool track_loglik = true;

    void validate() const {
        if (rho < 0.0) throw ArgumentError("TlassoConfig: rho must be >= 0");
        if (em_tol <= 0.0 || glasso_tol <= 0.0)
            throw ArgumentError("TlassoConfig: tolerances must be positive");
        for (double nu : dof_mode.grid)
            if (!std::isinf(nu) && nu <= 2.0)
                throw ArgumentError("TlassoConfig: grid candidates must be > 2 or inf");
        if (dof_mode.kind == DofMode::Kind::Fixed && !std::isinf(dof_mode.fixed_dof) &&
            dof_mode.fixed_dof <= 2.0)
            throw ArgumentError("TlassoConfig: fixed dof must be > 2 or inf");
    }
};

struct TlassoResult {
    Eigen::VectorXd mean;
    Eigen::MatrixXd scale;      // C-hat
    Eigen::MatrixXd precision;  // Theta-hat = C-hat^{-1}
    double dof = kGaussianDof;
    Eigen::VectorXd weights;  // tau, one per sample
    int iterations = 0;
    double loglik = -std::numeric_limits<double>::infinity();
    bool dof_saturated = false;
};

/// E-step quantities: squared Mahalanobis distances delta^(i) of the columns
/// and the weights tau^(i) = (nu + m)/(nu + delta^(i)); tau == 1 at nu = inf.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> empirical_weights(
    const Eigen::MatrixXd& samples, const Eigen::VectorXd& mean,
    const Eigen::MatrixXd& scale_chol, double dof) {
    if (samples.rows() != mean.size() || scale_chol.rows() != mean.size())
        throw ArgumentError("empirical_weights: dimension mismatch");
    if (samples.cols() < 1) throw ArgumentError("empirical_weights: need at least one sample");
    Eigen::VectorXd delta = mahalanobis_sq_columns(scale_chol, mean, samples);
    Eigen::VectorXd tau;
    if (std::isinf(dof)) {
        tau = Eigen::VectorXd::Ones(samples.cols());
    } else {
        const double m = static_cast<double>(samples.rows());
        tau = (dof + m) / (delta.array() + dof);
    }
    return {std::move(delta), std::move(tau)};
}

/// Sum of t log-densities of the columns under St(mean, scale, dof).
inline double loglik(const Eigen::MatrixXd& samples, const Eigen::VectorXd& mean,
                     const Eigen::MatrixXd& scale, double dof) {
    const Eigen::MatrixXd chol = cholesky_lower(scale, "loglik scale");
    const Eigen::VectorXd delta = mahalanobis_sq_columns(chol, mean, samples);
    const double logdet = 2.0 * chol.diagonal().array().log().sum();
    const int m = static_cast<int>(samples.rows());
    double total = 0.0;
    for (Eigen::Index i = 0; i < delta.size(); ++i)
        total += detail::t_logpdf_kernel(delta(i), logdet, m, dof);
    return total;
}

struct DofRootResult {
    double value = 0.0;
    bool saturated = false;
};

/// Root of the EM degree-of-freedom equation
///   f(nu) = sum_i [ log(nu/2) + 1 - psi(nu/2)
///                   + psi((nu_prev+m)/2) - log((nu_prev+delta_i)/2)
///                   - (nu_prev+m)/(nu_prev+delta_i) ],
/// bisected on nu in [2+1e-3, 1000]. f is strictly decreasing, so if it has
/// no sign change on the bracket the closer endpoint is returned with the
/// saturation flag set.
inline DofRootResult dof_root(const Eigen::VectorXd& deltas, double nu_prev, int m) {
    if (!deltas.allFinite()) throw ArgumentError("dof_root: non-finite deltas");
    if (!(nu_prev > 2.0)) throw ArgumentError("dof_root: nu_prev must be > 2");
    const double count = static_cast<double>(deltas.size());
    double constant = 0.0;
    const double lifted = digamma(0.5 * (nu_prev + m));
    for (Eigen::Index i = 0; i < deltas.size(); ++i) {
        const double s = nu_prev + deltas(i);
        constant += lifted - std::log(0.5 * s) - (nu_prev + m) / s + 1.0;
    }
    const auto f = [&](double nu) {
        return count * (std::log(0.5 * nu) - digamma(0.5 * nu)) + constant;
    };

    double lo = 2.0 + 1e-3;
    double hi = 1000.0;
    const double flo = f(lo);
    const double fhi = f(hi);
    if (flo <= 0.0 || fhi >= 0.0) {
        // no sign change: pick the endpoint with the smaller |f|
        return {std::abs(flo) <= std::abs(fhi) ? lo : hi, true};
    }
    for (int it = 0; it < 200 && hi - lo > 1e-9 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return {0.5 * (lo + hi), false};
}

/// Graphical lasso with the l1 penalty on off-diagonal precision entries:
///   argmax_Theta logdet(Theta) - tr(S Theta) - rho * ||Theta||_{1,off}.
/// Block coordinate descent in covariance space (Friedman et al.): column j
/// of W is replaced by W11 beta with beta the lasso solution, cycling until
/// the max off-diagonal KKT residual drops below tol. The returned W keeps
/// W_ii = S_ii exactly; Theta is its SPD inverse.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> glasso(
    const Eigen::MatrixXd& S, double rho, const TlassoConfig& config,
    const Eigen::MatrixXd* w_warm = nullptr, const Eigen::MatrixXd* theta_warm = nullptr) {
    const Eigen::Index m = S.rows();
    if (S.cols() != m) throw ArgumentError("glasso: S must be square");
    if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + S.cwiseAbs().maxCoeff()))
        throw ArgumentError("glasso: S must be symmetric");
    if (rho < 0.0) throw ArgumentError("glasso: rho must be >= 0");
    if ((S.diagonal().array() <= 0.0).any())
        throw SingularError("glasso: S has a non-positive diagonal entry");

    if (m == 1 || rho == 0.0) {
        Eigen::MatrixXd W = symmetrize(S);
        Eigen::MatrixXd theta = spd_inverse(W, "glasso S");
        return {std::move(W), std::move(theta)};
    }

    const auto soft = [](double v, double t) {
        return v > t ? v - t : (v < -t ? v + t : 0.0);
    };
    const auto cold_init = [&]() -> Eigen::MatrixXd {
        Eigen::MatrixXd W = 0.95 * symmetrize(S);
        W.diagonal() = S.diagonal();
        return W;
    };

    Eigen::MatrixXd W;
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(m, m);  // lasso coefficients per column
    if (w_warm != nullptr && w_warm->rows() == m) {
        // previous covariance estimate, projected into the dual box around S
        W = symmetrize(*w_warm);
        W.diagonal() = S.diagonal();
        for (Eigen::Index j = 0; j < m; ++j)
            for (Eigen::Index k = 0; k < m; ++k)
                if (k != j) W(k, j) = std::clamp(W(k, j), S(k, j) - rho, S(k, j) + rho);
    } else {
        W = cold_init();
    }
    if (theta_warm != nullptr && theta_warm->rows() == m) {
        for (Eigen::Index j = 0; j < m; ++j)
            for (Eigen::Index k = 0; k < m; ++k)
                if (k != j) B(k, j) = -(*theta_warm)(k, j) / (*theta_warm)(j, j);
    }

    const double inner_tol = 0.1 * config.glasso_tol;
    Eigen::VectorXd u(m);
    double residual = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < config.glasso_max_iters; ++sweep) {
        for (Eigen::Index j = 0; j < m; ++j) {
            B(j, j) = 0.0;
            u.noalias() = W * B.col(j);  // (W11 beta) on k != j; B(j,j) == 0
            for (int pass = 0; pass < 200; ++pass) {
                double max_step = 0.0;
                for (Eigen::Index k = 0; k < m; ++k) {
                    if (k == j) continue;
                    const double resid = S(k, j) - (u(k) - W(k, k) * B(k, j));
                    const double bk = soft(resid, rho) / W(k, k);
                    const double db = bk - B(k, j);
                    if (db != 0.0) {
                        B(k, j) = bk;
                        u.noalias() += db * W.col(k);
                        max_step = std::max(max_step, std::abs(db) * W(k, k));
                    }
                }
                if (max_step <= inner_tol) break;
            }
            if (!B.col(j).allFinite()) {
                // restart from the cold initializer; the warm start was unusable
                W = cold_init();
                B.setZero();
                break;
            }
            u.noalias() = W * B.col(j);
            for (Eigen::Index k = 0; k < m; ++k) {
                if (k == j) continue;
                W(k, j) = u(k);
                W(j, k) = u(k);
            }
        }

        // max off-diagonal KKT residual of the full problem
        residual = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            u.noalias() = W * B.col(j);
            for (Eigen::Index k = 0; k < m; ++k) {
                if (k == j) continue;
                const double g = u(k) - S(k, j);
                const double r = B(k, j) != 0.0
                                     ? std::abs(g + rho * (B(k, j) > 0.0 ? 1.0 : -1.0))
                                     : std::max(0.0, std::abs(g) - rho);
                residual = std::max(residual, r);
            }
        }
        if (residual <= config.glasso_tol) {
            Eigen::MatrixXd Wsym = symmetrize(W);
            Wsym.diagonal() = S.diagonal();
            Eigen::MatrixXd theta = spd_inverse(Wsym, "glasso W");
            return {std::move(Wsym), std::move(theta)};
        }
    }
    throw ConvergenceError("glasso: no convergence within glasso_max_iters", residual);
}

/// One E+M update of the tlasso EM. Weights come from the previous iterate,
/// the new mean uses the new weights, and the new scale uses the new mean
/// (Algorithm-1 ordering). The scale normalization is configurable; 1/M is
/// the ML convention and the default.
inline TlassoResult em_step(const Eigen::MatrixXd& samples, const TlassoResult& prev,
                            const TlassoConfig& config) {
    const Eigen::Index m = samples.rows();
    const Eigen::Index M = samples.cols();
    if (prev.mean.size() != m || prev.scale.rows() != m)
        throw ArgumentError("em_step: dimension mismatch");

    const Eigen::MatrixXd prev_chol = cholesky_lower(prev.scale, "EM scale");
    auto [delta, tau] = empirical_weights(samples, prev.mean, prev_chol, prev.dof);

    TlassoResult next;
    next.weights = tau;
    next.mean = (samples * tau) / tau.sum();
    const double norm = config.scale_normalization == ScaleNormalization::OneOverM
                            ? static_cast<double>(M)
                            : static_cast<double>(M - 1);
    Eigen::MatrixXd centered = samples.colwise() - next.mean;
    Eigen::MatrixXd s_tau =
        symmetrize((centered * tau.asDiagonal() * centered.transpose()) / norm);

    next.dof = prev.dof;
    if (config.dof_mode.kind == DofMode::Kind::RootUpdate) {
        const DofRootResult r = dof_root(delta, prev.dof, static_cast<int>(m));
        next.dof = r.value;
        next.dof_saturated = r.saturated;
    }

    if (config.rho > 0.0) {
        const bool warm = prev.precision.rows() == m;
        auto [w, theta] = glasso(s_tau, config.rho, config, warm ? &prev.scale : nullptr,
                                 warm ? &prev.precision : nullptr);
        next.scale = std::move(w);
        next.precision = std::move(theta);
    } else {
        next.precision = spd_inverse(s_tau, "weighted scale");
        next.scale = std::move(s_tau);
    }
    next.iterations = prev.iterations + 1;
    if (config.track_loglik)
        next.loglik = loglik(samples, next.mean, next.scale, next.dof);
    return next;
}

namespace detail {

inline TlassoResult run_em(const Eigen::MatrixXd& samples, double init_dof,
                           const TlassoConfig& config) {
    const Eigen::Index M = samples.cols();
    TlassoResult cur;
    cur.mean = samples.rowwise().mean();
    Eigen::MatrixXd centered = samples.colwise() - cur.mean;
    cur.scale = symmetrize(centered * centered.transpose() /
                           static_cast<double>(M - 1));
    cur.dof = init_dof;

    for (int it = 0; it < config.max_em_iters; ++it) {
        TlassoResult next = em_step(samples, cur, config);
        const double change =
            std::max((next.mean - cur.mean).norm() / (1.0 + next.mean.norm()),
                     (next.scale - cur.scale).norm() / (1.0 + next.scale.norm()));
        cur = std::move(next);
        if (change < config.em_tol) break;
    }
    // final weights and log-likelihood at the fitted parameters
    const Eigen::MatrixXd chol = cholesky_lower(cur.scale, "fitted scale");
    cur.weights = empirical_weights(samples, cur.mean, chol, cur.dof).second;
    cur.loglik = loglik(samples, cur.mean, cur.scale, cur.dof);
    return cur;
}

}  // namespace detail

/// tlasso: EM estimation of (mean, scale, precision, dof) of a t-distribution
/// with a graphical-lasso regularized scale update. Fixed mode runs EM at the
/// given dof; RootUpdate solves the dof root equation every iteration;
/// GridSearch runs Fixed-mode EM per candidate and keeps the triple with the
/// highest log-likelihood, ties broken toward smaller dof.
inline TlassoResult tlasso(const Eigen::MatrixXd& samples, TlassoConfig config) {
    config.validate();
    if (samples.cols() < 2) throw ArgumentError("tlasso: need at least two samples");
    if ((samples.colwise() - samples.col(0)).cwiseAbs().maxCoeff() == 0.0)
        throw SingularError("tlasso: degenerate samples (all identical)");

    switch (config.dof_mode.kind) {
        case DofMode::Kind::Fixed:
            return detail::run_em(samples, config.dof_mode.fixed_dof, config);
        case DofMode::Kind::RootUpdate:
            return detail::run_em(samples, config.root_update_init_dof, config);
        case DofMode::Kind::GridSearch: {
            std::vector<double> grid = config.dof_mode.grid;
            if (grid.empty()) grid = default_dof_grid();
            std::sort(grid.begin(), grid.end());
            TlassoConfig inner = config;
            inner.dof_mode = DofMode::fixed(kGaussianDof);
            inner.track_loglik = false;
            TlassoResult best;
            bool have_best = false;
            for (double nu : grid) {
                inner.dof_mode.fixed_dof = nu;
                TlassoResult fit = detail::run_em(samples, nu, inner);
                if (!have_best || fit.loglik > best.loglik) {
                    best = std::move(fit);
                    have_best = true;
                }
            }
            return best;
        }
    }
    throw ArgumentError("tlasso: unknown dof mode");
}

}  // namespace enrf
