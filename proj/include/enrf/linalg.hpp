#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "enrf/errors.hpp"

namespace enrf {

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& a) {
    return 0.5 * (a + a.transpose());
}

/// Lower Cholesky factor of an SPD matrix. If the factorization fails,
/// retries once with +1e-10*trace(a)/m on the diagonal; a second failure
/// raises SingularError. Sample scale matrices near singularity are expected
/// in the low-data regime, so the retry is part of the contract.
inline Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a,
                                      const char* what = "matrix") {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    const Eigen::Index m = a.rows();
    const double jitter = 1e-10 * a.trace() / static_cast<double>(m > 0 ? m : 1);
    Eigen::MatrixXd aj = a;
    aj.diagonal().array() += jitter;
    llt.compute(aj);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    throw SingularError(std::string("cholesky_lower: ") + what +
                        " is not positive definite (after jitter retry)");
}

/// Solve L x = b for lower-triangular L.
inline Eigen::VectorXd solve_lower(const Eigen::MatrixXd& L, Eigen::VectorXd b) {
    L.triangularView<Eigen::Lower>().solveInPlace(b);
    return b;
}

/// Solve L^T x = b for lower-triangular L.
inline Eigen::VectorXd solve_lower_transposed(const Eigen::MatrixXd& L, Eigen::VectorXd b) {
    L.triangularView<Eigen::Lower>().transpose().solveInPlace(b);
    return b;
}

/// Inverse of an SPD matrix through its lower Cholesky factor.
inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& a, const char* what = "matrix") {
    const Eigen::MatrixXd L = cholesky_lower(a, what);
    Eigen::MatrixXd inv = Eigen::MatrixXd::Identity(a.rows(), a.cols());
    L.triangularView<Eigen::Lower>().solveInPlace(inv);
    L.triangularView<Eigen::Lower>().transpose().solveInPlace(inv);
    return symmetrize(inv);
}

/// Squared Mahalanobis norms ||L^{-1}(col - mu)||^2 for every column.
inline Eigen::VectorXd mahalanobis_sq_columns(const Eigen::MatrixXd& L,
                                              const Eigen::VectorXd& mu,
                                              const Eigen::MatrixXd& samples) {
    Eigen::MatrixXd centered = samples.colwise() - mu;
    L.triangularView<Eigen::Lower>().solveInPlace(centered);
    return centered.colwise().squaredNorm();
}

}  // namespace enrf
