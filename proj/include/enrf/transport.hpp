#pragma once

#include <cmath>
#include <utility>

#include <Eigen/Core>

#include "enrf/errors.hpp"
#include "enrf/linalg.hpp"
#include "enrf/tdist.hpp"

namespace enrf {

/// Frozen parameters of the closed-form analysis map T_nu for a joint
/// t-distribution over (Y, X):
///   T_nu(y, x) = mu_X + C_XY C_Y^{-1} (y* - mu_Y)
///                + sqrt(alpha(y*)/alpha(y)) [(x - mu_X) - C_XY C_Y^{-1}(y - mu_Y)]
/// with alpha(y) = (nu + delta_Y(y)) / (nu + d). Everything is applied through
/// triangular solves on chol_y; no state-block factor is needed (the
/// conditional Cholesky factors cancel to the scalar alpha ratio). dof = inf
/// is the exact Kalman map.
struct AnalysisMapT {
    Eigen::VectorXd mu_y;
    Eigen::VectorXd mu_x;
    Eigen::MatrixXd chol_y;  // lower, chol_y chol_y^T = C_Y
    Eigen::MatrixXd cross;   // C_XY, n x d
    Eigen::MatrixXd schur;   // C_X - C_XY C_Y^{-1} C_XY^T (cached for pushforward stats)
    double dof = kGaussianDof;
    int d = 0;
    int n = 0;

    bool is_kalman() const { return std::isinf(dof); }
};

/// Knothe-Rosenblatt rearrangement of the joint: the same parameters plus the
/// inverse-Schur factor S_{X|Y} (lower triangular, S^T S = Schur^{-1}); the
/// conditional factor is L_{X|Y=y} = S_{X|Y} / sqrt(alpha(y)).
struct KRMapT : AnalysisMapT {
    Eigen::MatrixXd schur_factor;  // S_{X|Y}
};

inline AnalysisMapT build_analysis_map(const JointSplit& joint) {
    AnalysisMapT map;
    map.d = joint.obs_dim();
    map.n = joint.state_dim();
    map.mu_y = joint.mean_y();
    map.mu_x = joint.mean_x();
    map.cross = joint.cross();
    map.dof = joint.dist().dof();
    try {
        map.chol_y = cholesky_lower(joint.scale_y(), "C_Y");
    } catch (const SingularError&) {
        throw SingularError("build_analysis_map: observation scale C_Y is singular");
    }
    // K^T = C_Y^{-1} C_XY^T through the factor; schur = C_X - (L^{-1}C_XY^T)^T(L^{-1}C_XY^T)
    Eigen::MatrixXd half = map.cross.transpose();
    map.chol_y.triangularView<Eigen::Lower>().solveInPlace(half);
    map.schur = symmetrize(joint.scale_x() - half.transpose() * half);
    return map;
}

inline KRMapT build_kr_map(const JointSplit& joint) {
    KRMapT map;
    static_cast<AnalysisMapT&>(map) = build_analysis_map(joint);
    const Eigen::MatrixXd g = cholesky_lower(map.schur, "Schur complement");
    Eigen::MatrixXd inv = Eigen::MatrixXd::Identity(map.n, map.n);
    g.triangularView<Eigen::Lower>().solveInPlace(inv);
    map.schur_factor = inv;  // G^{-1}, lower triangular; S^T S = Schur^{-1}
    return map;
}

namespace detail {

/// Whitened observation z = L_Y^{-1}(y - mu_y) and its squared norm.
inline std::pair<Eigen::VectorXd, double> whiten_obs(const AnalysisMapT& map,
                                                     const Eigen::VectorXd& y) {
    Eigen::VectorXd z = solve_lower(map.chol_y, y - map.mu_y);
    const double delta = z.squaredNorm();
    return {std::move(z), delta};
}

/// Ratio sqrt(alpha(y*)/alpha(y)) from the two squared distances, computed in
/// log space so extreme outlier deltas cannot overflow.
inline double alpha_ratio(double dof, double delta_star, double delta_i) {
    if (std::isinf(dof)) return 1.0;
    return std::exp(0.5 * (std::log(dof + delta_star) - std::log(dof + delta_i)));
}

}  // namespace detail

/// Both blocks of the KR rearrangement at (y, x); z1 depends on y only.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> kr_forward(const KRMapT& map,
                                                              const Eigen::VectorXd& y,
                                                              const Eigen::VectorXd& x) {
    if (y.size() != map.d || x.size() != map.n)
        throw ArgumentError("kr_forward: dimension mismatch");
    auto [z1, delta] = detail::whiten_obs(map, y);
    Eigen::VectorXd innovation =
        (x - map.mu_x) - map.cross * solve_lower_transposed(map.chol_y, z1);
    Eigen::VectorXd z2 = map.schur_factor.triangularView<Eigen::Lower>() * innovation;
    if (!map.is_kalman()) {
        const double alpha = (map.dof + delta) / (map.dof + map.d);
        z2 /= std::sqrt(alpha);
    }
    return {std::move(z1), std::move(z2)};
}

/// T_nu applied to one joint forecast pair (y_i, x_i) for the realized
/// observation y*. Two triangular solve pairs (the z and b representers);
/// no explicit matrix inverse.
inline Eigen::VectorXd apply_analysis(const AnalysisMapT& map, const Eigen::VectorXd& y_star,
                                      const Eigen::VectorXd& y_i, const Eigen::VectorXd& x_i) {
    if (y_star.size() != map.d || y_i.size() != map.d || x_i.size() != map.n)
        throw ArgumentError("apply_analysis: dimension mismatch");
    auto [z_star, delta_star] = detail::whiten_obs(map, y_star);
    auto [z_i, delta_i] = detail::whiten_obs(map, y_i);
    const Eigen::VectorXd b_star = solve_lower_transposed(map.chol_y, z_star);
    const Eigen::VectorXd b_i = solve_lower_transposed(map.chol_y, z_i);
    const double ratio = detail::alpha_ratio(map.dof, delta_star, delta_i);
    return map.mu_x + map.cross * b_star +
           ratio * ((x_i - map.mu_x) - map.cross * b_i);
}

/// The Kalman update T_KF(y, x) = x - C_XY C_Y^{-1}(y - y*): the alpha ratio
/// forced to 1.
inline Eigen::VectorXd kalman_apply(const AnalysisMapT& map, const Eigen::VectorXd& y_star,
                                    const Eigen::VectorXd& y_i, const Eigen::VectorXd& x_i) {
    if (y_star.size() != map.d || y_i.size() != map.d || x_i.size() != map.n)
        throw ArgumentError("kalman_apply: dimension mismatch");
    Eigen::VectorXd diff = y_i - y_star;
    map.chol_y.triangularView<Eigen::Lower>().solveInPlace(diff);
    map.chol_y.triangularView<Eigen::Lower>().transpose().solveInPlace(diff);
    return x_i - map.cross * diff;
}

/// Map a whole ensemble: column i of the result is T(y_i, x_i). The per
/// particle loop shares the y* representer and the batched triangular solves.
inline Eigen::MatrixXd apply_analysis_ensemble(const AnalysisMapT& map,
                                               const Eigen::VectorXd& y_star,
                                               const Eigen::MatrixXd& obs,
                                               const Eigen::MatrixXd& states,
                                               bool force_kalman = false) {
    if (obs.rows() != map.d || states.rows() != map.n || obs.cols() != states.cols())
        throw ArgumentError("apply_analysis_ensemble: dimension mismatch");
    auto [z_star, delta_star] = detail::whiten_obs(map, y_star);
    const Eigen::VectorXd shift = map.mu_x + map.cross * solve_lower_transposed(map.chol_y, z_star);

    Eigen::MatrixXd z = obs.colwise() - map.mu_y;
    map.chol_y.triangularView<Eigen::Lower>().solveInPlace(z);
    const Eigen::VectorXd deltas = z.colwise().squaredNorm();
    map.chol_y.triangularView<Eigen::Lower>().transpose().solveInPlace(z);  // b representers

    Eigen::MatrixXd deviations = (states.colwise() - map.mu_x) - map.cross * z;
    Eigen::MatrixXd out(map.n, states.cols());
    const bool kalman = force_kalman || map.is_kalman();
    for (Eigen::Index i = 0; i < states.cols(); ++i) {
        const double ratio =
            kalman ? 1.0 : detail::alpha_ratio(map.dof, delta_star, deltas(i));
        out.col(i) = shift + ratio * deviations.col(i);
    }
    return out;
}

/// Statistics of the pushforward of the prior through the map: identical to
/// conditioning the joint on y*. The Kalman variant returns the unscaled
/// Schur complement and leaves the dof unchanged.
inline TDist pushforward_stats(const AnalysisMapT& map, const Eigen::VectorXd& y_star) {
    if (y_star.size() != map.d) throw ArgumentError("pushforward_stats: dimension mismatch");
    auto [z_star, delta_star] = detail::whiten_obs(map, y_star);
    const Eigen::VectorXd mean =
        map.mu_x + map.cross * solve_lower_transposed(map.chol_y, z_star);
    if (map.is_kalman()) return TDist(mean, map.schur, kGaussianDof);
    const double alpha = (map.dof + delta_star) / (map.dof + map.d);
    try {
        return TDist(mean, alpha * map.schur, map.dof + map.d);
    } catch (const SingularError&) {
        throw SingularError("pushforward_stats: posterior scale is singular");
    }
}

}  // namespace enrf
