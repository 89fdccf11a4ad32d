#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "enrf/errors.hpp"
#include "enrf/estimation.hpp"
#include "enrf/linalg.hpp"
#include "enrf/rng.hpp"
#include "enrf/tdist.hpp"
#include "enrf/transport.hpp"

namespace enrf {

inline constexpr double kNoLocalization = std::numeric_limits<double>::infinity();
inline constexpr int kNoRefresh = std::numeric_limits<int>::max();

/// Ensemble of state particles, one per column.
struct EnsembleState {
    Eigen::MatrixXd particles;  // n x M
    int time_index = 0;

    int dim() const { return static_cast<int>(particles.rows()); }
    int size() const { return static_cast<int>(particles.cols()); }
};

struct SEnKFSpec {
    double inflation = 1.0;
    double loc_radius = kNoLocalization;
};

struct SEnKFGlassoSpec {
    double inflation = 1.0;
    double rho_coeff = 0.5;  // effective penalty is rho_coeff / sqrt(M)
};

enum class DofPolicyKind { Const, FixedFromFreeRun, Refresh, Adapt };

struct EnRFSpec {
    double rho_coeff = 0.5;  // effective penalty is rho_coeff / sqrt(sample count)
    DofPolicyKind policy = DofPolicyKind::Adapt;
    double const_dof = kGaussianDof;           // Const policy
    int refresh_interval = 20;                 // Refresh: cycles between re-estimates
    int buffer_capacity = 500;                 // Refresh: joint samples retained
    std::vector<double> dof_grid;              // empty selects the default grid
    bool hybrid_kalman_reversion = false;      // optional: Kalman map when dof-hat > 40
};

struct FilterSpec {
    std::string name;
    std::variant<SEnKFSpec, SEnKFGlassoSpec, EnRFSpec> kind;

    bool is_enrf() const { return std::holds_alternative<EnRFSpec>(kind); }
    void validate() const {
        if (const auto* s = std::get_if<SEnKFSpec>(&kind)) {
            if (s->inflation < 0.9 || s->inflation > 1.5)
                throw ArgumentError("FilterSpec: inflation outside [0.9, 1.5]");
        } else if (const auto* g = std::get_if<SEnKFGlassoSpec>(&kind)) {
            if (g->inflation < 0.9 || g->inflation > 1.5)
                throw ArgumentError("FilterSpec: inflation outside [0.9, 1.5]");
            if (g->rho_coeff < 0.0) throw ArgumentError("FilterSpec: rho must be >= 0");
        } else if (const auto* e = std::get_if<EnRFSpec>(&kind)) {
            if (e->rho_coeff < 0.0) throw ArgumentError("FilterSpec: rho must be >= 0");
            if (e->policy == DofPolicyKind::Refresh && e->buffer_capacity < 2)
                throw ArgumentError("FilterSpec: buffer capacity must be >= 2");
        }
    }
};

/// Ring buffer of joint (y, x) columns feeding the RefreshEnRF dof updates.
class DofBuffer {
public:
    DofBuffer(int joint_dim, int capacity, double initial_dof)
        : cols_(joint_dim, capacity), current_dof_(initial_dof) {}

    double current_dof() const { return current_dof_; }
    int size() const { return size_; }
    bool full() const { return size_ == static_cast<int>(cols_.cols()); }
    int last_refresh_time() const { return last_refresh_time_; }
    int refresh_count() const { return refresh_count_; }

    void append(const Eigen::Ref<const Eigen::MatrixXd>& joint) {
        for (Eigen::Index j = 0; j < joint.cols(); ++j) {
            cols_.col(head_) = joint.col(j);
            head_ = (head_ + 1) % static_cast<int>(cols_.cols());
            size_ = std::min(size_ + 1, static_cast<int>(cols_.cols()));
        }
    }

    const Eigen::MatrixXd& data() const { return cols_; }

    void set_dof(double nu, int time_index) {
        current_dof_ = nu;
        last_refresh_time_ = time_index;
        ++refresh_count_;
    }

private:
    Eigen::MatrixXd cols_;
    int head_ = 0;
    int size_ = 0;
    double current_dof_;
    int last_refresh_time_ = 0;
    int refresh_count_ = 0;
};

/// x_i <- mean + sqrt(alpha) (x_i - mean): preserves the ensemble mean
/// exactly and scales the sample covariance by alpha.
inline EnsembleState apply_inflation(const EnsembleState& state, double alpha) {
    if (!(alpha > 0.0)) throw ArgumentError("apply_inflation: alpha must be > 0");
    if (alpha == 1.0) return state;
    EnsembleState out = state;
    const Eigen::VectorXd mean = state.particles.rowwise().mean();
    const double root = std::sqrt(alpha);
    out.particles = (root * (state.particles.colwise() - mean)).colwise() + mean;
    return out;
}

/// Fifth-order piecewise-rational Gaspari-Cohn taper with half-width c;
/// support is [0, 2c].
inline double gaspari_cohn(double dist, double c) {
    const double z = dist / c;
    if (z >= 2.0) return 0.0;
    const double z2 = z * z, z3 = z2 * z, z4 = z3 * z, z5 = z4 * z;
    if (z <= 1.0)
        return -0.25 * z5 + 0.5 * z4 + 0.625 * z3 - 5.0 / 3.0 * z2 + 1.0;
    return z5 / 12.0 - 0.5 * z4 + 0.625 * z3 + 5.0 / 3.0 * z2 - 5.0 * z + 4.0 -
           2.0 / (3.0 * z);
}

/// Positions of matrix rows/columns on a periodic ring of n sites.
struct RingGeometry {
    int ring_size = 0;
    std::vector<int> row_positions;
    std::vector<int> col_positions;

    double distance(int a, int b) const {
        const int diff = std::abs(a - b);
        return static_cast<double>(std::min(diff, ring_size - diff));
    }
};

/// Elementwise Gaspari-Cohn localization of a covariance block; radius = inf
/// is the no-localization sentinel.
inline Eigen::MatrixXd localize_covariance(const Eigen::MatrixXd& cov, double radius,
                                           const RingGeometry& geometry) {
    if (std::isinf(radius)) return cov;
    if (!(radius > 0.0)) throw ArgumentError("localize_covariance: radius must be > 0");
    if (cov.rows() != static_cast<Eigen::Index>(geometry.row_positions.size()) ||
        cov.cols() != static_cast<Eigen::Index>(geometry.col_positions.size()))
        throw ArgumentError("localize_covariance: geometry/covariance mismatch");
    Eigen::MatrixXd out(cov.rows(), cov.cols());
    for (Eigen::Index j = 0; j < cov.cols(); ++j)
        for (Eigen::Index i = 0; i < cov.rows(); ++i)
            out(i, j) = cov(i, j) * gaspari_cohn(geometry.distance(geometry.row_positions[i],
                                                                   geometry.col_positions[j]),
                                                 radius);
    return out;
}

namespace detail {

struct EmpiricalJoint {
    Eigen::VectorXd mean_y, mean_x;
    Eigen::MatrixXd cov_y;    // d x d
    Eigen::MatrixXd cross;    // n x d (state-obs)
};

inline EmpiricalJoint empirical_joint(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& states) {
    const double denom = static_cast<double>(obs.cols() - 1);
    EmpiricalJoint e;
    e.mean_y = obs.rowwise().mean();
    e.mean_x = states.rowwise().mean();
    const Eigen::MatrixXd oc = obs.colwise() - e.mean_y;
    const Eigen::MatrixXd sc = states.colwise() - e.mean_x;
    e.cov_y = symmetrize(oc * oc.transpose() / denom);
    e.cross = sc * oc.transpose() / denom;
    return e;
}

/// x_i - gain (y_i - y*) applied across the ensemble via triangular solves.
inline Eigen::MatrixXd kalman_shift(const Eigen::MatrixXd& cov_y, const Eigen::MatrixXd& cross,
                                    const Eigen::MatrixXd& states, const Eigen::MatrixXd& obs,
                                    const Eigen::VectorXd& y_star) {
    const Eigen::MatrixXd ly = cholesky_lower(cov_y, "empirical Sigma_Y");
    Eigen::MatrixXd innov = obs.colwise() - y_star;
    ly.triangularView<Eigen::Lower>().solveInPlace(innov);
    ly.triangularView<Eigen::Lower>().transpose().solveInPlace(innov);
    return states - cross * innov;
}

}  // namespace detail

/// Stochastic EnKF analysis: empirical covariances (1/(M-1)), optional
/// distance localization, per-particle update x_i - K (y_i - y*). Synthetic
/// observation column i must come from the likelihood at particle i.
inline EnsembleState senkf_analysis(const EnsembleState& state,
                                    const Eigen::MatrixXd& synthetic_obs,
                                    const Eigen::VectorXd& y_star, const SEnKFSpec& spec,
                                    const RingGeometry* geometry = nullptr) {
    if (synthetic_obs.cols() != state.particles.cols())
        throw ArgumentError("senkf_analysis: ensemble/observation count mismatch");
    if (synthetic_obs.rows() != y_star.size())
        throw ArgumentError("senkf_analysis: observation dimension mismatch");
    auto joint = detail::empirical_joint(synthetic_obs, state.particles);
    if (!std::isinf(spec.loc_radius)) {
        if (geometry == nullptr)
            throw ArgumentError("senkf_analysis: localization requires ring geometry");
        RingGeometry obs_geom{geometry->ring_size, geometry->col_positions,
                              geometry->col_positions};
        joint.cov_y = localize_covariance(joint.cov_y, spec.loc_radius, obs_geom);
        joint.cross = localize_covariance(joint.cross, spec.loc_radius, *geometry);
    }
    EnsembleState out = state;
    out.particles = detail::kalman_shift(joint.cov_y, joint.cross, state.particles,
                                         synthetic_obs, y_star);
    return out;
}

/// sEnKF with the joint empirical covariance regularized by the glasso; the
/// regularized blocks replace the raw ones in the Kalman update.
inline EnsembleState senkf_glasso_analysis(const EnsembleState& state,
                                           const Eigen::MatrixXd& synthetic_obs,
                                           const Eigen::VectorXd& y_star,
                                           const SEnKFGlassoSpec& spec) {
    if (synthetic_obs.cols() != state.particles.cols())
        throw ArgumentError("senkf_glasso_analysis: ensemble/observation count mismatch");
    const int d = static_cast<int>(synthetic_obs.rows());
    const int n = state.dim();
    const int M = state.size();
    Eigen::MatrixXd joint(d + n, M);
    joint.topRows(d) = synthetic_obs;
    joint.bottomRows(n) = state.particles;

    const Eigen::VectorXd mean = joint.rowwise().mean();
    const Eigen::MatrixXd centered = joint.colwise() - mean;
    const Eigen::MatrixXd sample_cov =
        symmetrize(centered * centered.transpose() / static_cast<double>(M - 1));

    Eigen::MatrixXd cov = sample_cov;
    const double rho = spec.rho_coeff / std::sqrt(static_cast<double>(M));
    if (rho > 0.0) {
        TlassoConfig cfg;
        cfg.rho = rho;
        cov = glasso(sample_cov, rho, cfg).first;
    }
    EnsembleState out = state;
    out.particles = detail::kalman_shift(cov.topLeftCorner(d, d), cov.bottomLeftCorner(n, d),
                                         state.particles, synthetic_obs, y_star);
    return out;
}

using LikelihoodSampler = std::function<Eigen::VectorXd(const Eigen::VectorXd&, RngStream&)>;

void update_dof_buffer(DofBuffer& buffer, const Eigen::MatrixXd& joint_samples,
                       int time_index, const EnRFSpec& spec);

/// One EnRF analysis step: draw synthetic observations from the likelihood,
/// fit the joint t-distribution with tlasso under the resolved dof policy,
/// build the analysis map and push every particle through it. The same
/// synthetic batch serves estimation and the per-particle update, and no
/// multiplicative inflation is ever applied.
inline EnsembleState enrf_analysis(const EnsembleState& state,
                                   const LikelihoodSampler& likelihood_sampler,
                                   const Eigen::VectorXd& y_star, const EnRFSpec& spec,
                                   DofBuffer* dof_buffer, RngStream& rng,
                                   double* dof_hat_out = nullptr) {
    const int n = state.dim();
    const int M = state.size();
    const int d = static_cast<int>(y_star.size());

    Eigen::MatrixXd joint(d + n, M);
    for (int i = 0; i < M; ++i) {
        const Eigen::VectorXd y = likelihood_sampler(state.particles.col(i), rng);
        if (y.size() != d) throw ArgumentError("enrf_analysis: likelihood sample dimension");
        joint.col(i).head(d) = y;
        joint.col(i).tail(n) = state.particles.col(i);
    }

    TlassoConfig cfg;
    cfg.rho = spec.rho_coeff / std::sqrt(static_cast<double>(M));
    switch (spec.policy) {
        case DofPolicyKind::Const:
            cfg.dof_mode = DofMode::fixed(spec.const_dof);
            break;
        case DofPolicyKind::Adapt:
            cfg.dof_mode = DofMode::grid_search(
                spec.dof_grid.empty() ? default_dof_grid() : spec.dof_grid);
            break;
        case DofPolicyKind::FixedFromFreeRun:
        case DofPolicyKind::Refresh: {
            if (dof_buffer == nullptr)
                throw ArgumentError("enrf_analysis: dof policy requires a DofBuffer");
            if (spec.policy == DofPolicyKind::Refresh)
                update_dof_buffer(*dof_buffer, joint, state.time_index, spec);
            cfg.dof_mode = DofMode::fixed(dof_buffer->current_dof());
            break;
        }
    }

    const TlassoResult fit = tlasso(joint, cfg);
    if (dof_hat_out != nullptr) *dof_hat_out = fit.dof;

    const JointSplit split(TDist(fit.mean, fit.scale, fit.dof), d);
    const AnalysisMapT map = build_analysis_map(split);
    const bool revert_to_kalman =
        spec.hybrid_kalman_reversion && !std::isinf(fit.dof) && fit.dof > 40.0;

    EnsembleState out = state;
    out.particles = apply_analysis_ensemble(map, y_star, joint.topRows(d), state.particles,
                                            revert_to_kalman);
    return out;
}

/// Append this cycle's joint samples to the refresh buffer; once the buffer
/// is full and the refresh interval has elapsed, re-estimate the dof by
/// grid-search tlasso over the buffered samples. The buffer penalty follows
/// the rho = c/sqrt(M) heuristic at the buffer's own sample count.
inline void update_dof_buffer(DofBuffer& buffer, const Eigen::MatrixXd& joint_samples,
                              int time_index, const EnRFSpec& spec) {
    buffer.append(joint_samples);
    if (!buffer.full()) return;
    if (spec.refresh_interval == kNoRefresh) return;
    if (time_index < buffer.last_refresh_time() + spec.refresh_interval) return;
    TlassoConfig cfg;
    cfg.rho = spec.rho_coeff / std::sqrt(static_cast<double>(buffer.data().cols()));
    cfg.dof_mode =
        DofMode::grid_search(spec.dof_grid.empty() ? default_dof_grid() : spec.dof_grid);
    const TlassoResult fit = tlasso(buffer.data(), cfg);
    buffer.set_dof(fit.dof, time_index);
}

}  // namespace enrf
