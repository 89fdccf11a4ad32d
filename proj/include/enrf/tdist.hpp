#pragma once

#include <cmath>
#include <limits>
#include <utility>

#include <Eigen/Core>

#include "enrf/errors.hpp"
#include "enrf/linalg.hpp"
#include "enrf/rng.hpp"
#include "enrf/special.hpp"

namespace enrf {

inline constexpr double kGaussianDof = std::numeric_limits<double>::infinity();

namespace detail {

/// log t-density from precomputed pieces: squared Mahalanobis distance,
/// log-determinant of the scale matrix, dimension, degree of freedom.
/// Valid for any nu >= 1 (the TDist invariant nu > 2 is enforced elsewhere).
inline double t_logpdf_kernel(double delta, double logdet_scale, int m, double nu) {
    if (std::isinf(nu))
        return -0.5 * delta - 0.5 * m * std::log(2.0 * M_PI) - 0.5 * logdet_scale;
    return std::lgamma(0.5 * (nu + m)) - std::lgamma(0.5 * nu) -
           0.5 * m * std::log(nu * M_PI) - 0.5 * logdet_scale -
           0.5 * (nu + m) * std::log1p(delta / nu);
}

}  // namespace detail

/// Multivariate t-distribution St(mean, scale, dof). The scale matrix is SPD
/// (validated through its cached lower Cholesky factor) and dof is either a
/// finite value > 2 or +inf, which encodes the Gaussian limit exactly.
class TDist {
public:
    TDist(Eigen::VectorXd mean, Eigen::MatrixXd scale, double dof)
        : mean_(std::move(mean)), scale_(std::move(scale)), dof_(dof) {
        if (mean_.size() != scale_.rows() || scale_.rows() != scale_.cols())
            throw ArgumentError("TDist: mean/scale dimension mismatch");
        if (std::isnan(dof_) || (!std::isinf(dof_) && dof_ <= 2.0))
            throw ArgumentError("TDist: dof must be > 2 or +inf");
        if (!mean_.allFinite() || !scale_.allFinite())
            throw ArgumentError("TDist: non-finite parameters");
        chol_ = cholesky_lower(scale_, "scale");
    }

    int dim() const { return static_cast<int>(mean_.size()); }
    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::MatrixXd& scale() const { return scale_; }
    double dof() const { return dof_; }
    bool is_gaussian() const { return std::isinf(dof_); }
    /// Cached lower factor L with L L^T = scale.
    const Eigen::MatrixXd& scale_chol() const { return chol_; }

    double logdet_scale() const {
        return 2.0 * chol_.diagonal().array().log().sum();
    }

private:
    Eigen::VectorXd mean_;
    Eigen::MatrixXd scale_;
    double dof_;
    Eigen::MatrixXd chol_;
};

/// Squared Mahalanobis distance (x - mu)^T C^{-1} (x - mu), via one
/// triangular solve on the cached factor.
inline double mahalanobis(const TDist& dist, const Eigen::VectorXd& x) {
    if (x.size() != dist.mean().size())
        throw ArgumentError("mahalanobis: dimension mismatch");
    return solve_lower(dist.scale_chol(), x - dist.mean()).squaredNorm();
}

inline double logpdf(const TDist& dist, const Eigen::VectorXd& x) {
    if (x.size() != dist.mean().size())
        throw ArgumentError("logpdf: dimension mismatch");
    if (!x.allFinite()) throw ArgumentError("logpdf: non-finite input");
    const double delta = mahalanobis(dist, x);
    return detail::t_logpdf_kernel(delta, dist.logdet_scale(), dist.dim(), dist.dof());
}

/// i.i.d. draws, one per column, through the Gaussian-Gamma mixture
/// z = mu + L g / sqrt(tau) with tau ~ Gamma(nu/2, nu/2); dof = inf draws
/// pure Gaussians.
inline Eigen::MatrixXd sample(const TDist& dist, int count, RngStream& rng) {
    if (count < 1) throw ArgumentError("sample: count must be >= 1");
    const int m = dist.dim();
    Eigen::MatrixXd g(m, count);
    rng.fill_normal(g);
    Eigen::MatrixXd draws = dist.scale_chol() * g;
    if (!dist.is_gaussian()) {
        const double half_nu = 0.5 * dist.dof();
        for (int j = 0; j < count; ++j)
            draws.col(j) /= std::sqrt(rng.gamma(half_nu, half_nu));
    }
    draws.colwise() += dist.mean();
    return draws;
}

/// Distribution of A X + b: St(A mu + b, A C A^T, nu). The dof never changes
/// under affine maps. Selecting rows with a 0/1 matrix yields marginals.
inline TDist affine_transform(const TDist& dist, const Eigen::MatrixXd& a,
                              const Eigen::VectorXd& b) {
    if (a.cols() != dist.mean().size() || b.size() != a.rows())
        throw ArgumentError("affine_transform: dimension mismatch");
    Eigen::MatrixXd new_scale = symmetrize(a * dist.scale() * a.transpose());
    try {
        return TDist(a * dist.mean() + b, std::move(new_scale), dist.dof());
    } catch (const SingularError&) {
        throw SingularError("affine_transform: A C A^T is singular (rank-deficient A)");
    }
}

/// (mean, covariance) with covariance = nu/(nu-2) * scale; equal to the scale
/// at the Gaussian limit.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> moments(const TDist& dist) {
    if (dist.is_gaussian()) return {dist.mean(), dist.scale()};
    if (dist.dof() <= 2.0)
        throw MomentError("moments: covariance undefined for dof <= 2");
    return {dist.mean(), (dist.dof() / (dist.dof() - 2.0)) * dist.scale()};
}

/// Joint t-distribution over (Y, X) stacked with the observation block first.
class JointSplit {
public:
    JointSplit(TDist dist, int obs_dim)
        : dist_(std::move(dist)), d_(obs_dim), n_(dist_.dim() - obs_dim) {
        if (d_ < 0 || n_ < 1)
            throw ArgumentError("JointSplit: invalid block dimensions");
    }

    const TDist& dist() const { return dist_; }
    int obs_dim() const { return d_; }
    int state_dim() const { return n_; }

    Eigen::VectorXd mean_y() const { return dist_.mean().head(d_); }
    Eigen::VectorXd mean_x() const { return dist_.mean().tail(n_); }
    Eigen::MatrixXd scale_y() const { return dist_.scale().topLeftCorner(d_, d_); }
    /// C_XY, the n x d cross-scale block.
    Eigen::MatrixXd cross() const { return dist_.scale().bottomLeftCorner(n_, d_); }
    Eigen::MatrixXd scale_x() const { return dist_.scale().bottomRightCorner(n_, n_); }

private:
    TDist dist_;
    int d_;
    int n_;
};

/// Conditional X | Y = y of a joint t-distribution:
///   mean  = mu_X + C_XY C_Y^{-1} (y - mu_Y)
///   scale = alpha_Y(y) * (C_X - C_XY C_Y^{-1} C_XY^T),
///           alpha_Y(y) = (nu + delta_Y(y)) / (nu + d)
///   dof   = nu + d
/// At dof = inf the scale is the plain Schur complement and dof stays inf.
/// Conditioning on an empty observation block returns the marginal unchanged.
inline TDist condition(const JointSplit& joint, const Eigen::VectorXd& y) {
    const int d = joint.obs_dim();
    if (y.size() != d) throw ArgumentError("condition: observation dimension mismatch");
    if (d == 0) return TDist(joint.mean_x(), joint.scale_x(), joint.dist().dof());

    const Eigen::MatrixXd ly = cholesky_lower(joint.scale_y(), "C_Y");
    const Eigen::MatrixXd cross = joint.cross();
    // K = C_XY C_Y^{-1} via two triangular solves on C_XY^T.
    Eigen::MatrixXd kt = cross.transpose();  // d x n
    ly.triangularView<Eigen::Lower>().solveInPlace(kt);
    const double delta = solve_lower(ly, y - joint.mean_y()).squaredNorm();
    Eigen::MatrixXd schur = joint.scale_x() - kt.transpose() * kt;
    schur = symmetrize(schur);
    ly.triangularView<Eigen::Lower>().transpose().solveInPlace(kt);

    const Eigen::VectorXd mean = joint.mean_x() + kt.transpose() * (y - joint.mean_y());
    const double nu = joint.dist().dof();
    double out_dof = nu;
    if (!std::isinf(nu)) {
        const double alpha = (nu + delta) / (nu + d);
        schur *= alpha;
        out_dof = nu + d;
    }
    try {
        return TDist(mean, std::move(schur), out_dof);
    } catch (const SingularError&) {
        throw SingularError("condition: posterior scale (Schur complement) is singular");
    }
}

/// p-quantile of the standard univariate t-distribution eta_{nu,1} (Gaussian
/// at nu = inf). Bisection on the incomplete-beta CDF, bracket grown
/// geometrically from +-1, to |dq| < 1e-8.
inline double quantile1d(double nu, double p) {
    if (!(p > 0.0 && p < 1.0)) throw ArgumentError("quantile1d: p must lie in (0,1)");
    if (!std::isinf(nu) && !(nu >= 1.0)) throw ArgumentError("quantile1d: nu must be >= 1");
    if (p == 0.5) return 0.0;
    if (p > 0.5) return -quantile1d(nu, 1.0 - p);

    double lo = -1.0;
    while (student_t_cdf(lo, nu) > p) lo *= 2.0;
    double hi = 0.5 * lo;  // cdf(hi) > p >= cdf(lo) except when lo == -1
    if (lo == -1.0) hi = 0.0;
    while (hi - lo > 1e-8) {
        const double mid = 0.5 * (lo + hi);
        if (student_t_cdf(mid, nu) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// E[alpha_Y(y*)] = (nu + nu d/(nu-2)) / (nu + d) for y* ~ St(mu, C, nu);
/// strictly greater than 1 for finite nu, exactly 1 at the Gaussian limit.
inline double expected_alpha(double nu, int d) {
    if (d < 1) throw ArgumentError("expected_alpha: d must be >= 1");
    if (std::isinf(nu)) return 1.0;
    if (!(nu > 2.0)) throw ArgumentError("expected_alpha: nu must be > 2");
    return (nu + nu * d / (nu - 2.0)) / (nu + d);
}

}  // namespace enrf
