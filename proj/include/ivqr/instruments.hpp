#pragma once

#include <Eigen/Dense>

namespace ivqr {

// Least-squares projection of each column of x on the instrument matrix z,
// giving an exactly identified n x d instrument set.  Throws when zᵀz has
// condition number above 1e12.
Eigen::MatrixXd project_instruments(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z);

// Projection of x on the polynomial sieve basis [1, z_j, z_j^2, ..., z_j^K]
// over the non-constant columns of z (no cross terms, constant deduplicated).
Eigen::MatrixXd sieve_instruments(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, int degree);

// The sieve basis itself; exposed so callers can check orthogonality.
Eigen::MatrixXd sieve_basis(const Eigen::MatrixXd& z, int degree);

}  // namespace ivqr
