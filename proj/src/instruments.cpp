#include "ivqr/instruments.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ivqr {

namespace {

// fitted values of the column-wise least-squares regression of x on basis
Eigen::MatrixXd project_onto(const Eigen::MatrixXd& basis, const Eigen::MatrixXd& x,
                             const char* what) {
    if (basis.rows() != x.rows()) throw std::invalid_argument("instrument row count mismatch");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(basis);
    const auto& sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(sv.size() - 1);
    // condition of basisᵀbasis is the squared singular-value ratio
    if (!(smin > 0.0) || (smax / smin) * (smax / smin) > 1e12)
        throw std::runtime_error(std::string(what) +
                                 ": instrument basis is rank deficient (condition > 1e12)");
    const Eigen::MatrixXd beta = basis.colPivHouseholderQr().solve(x);
    return basis * beta;
}

bool is_constant_column(const Eigen::VectorXd& c) {
    const double lo = c.minCoeff(), hi = c.maxCoeff();
    return hi - lo <= 1e-12 * (std::abs(hi) + std::abs(lo) + 1.0);
}

}  // namespace

Eigen::MatrixXd project_instruments(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z) {
    if (z.cols() < x.cols())
        throw std::invalid_argument("project_instruments: need at least as many instruments as regressors");
    return project_onto(z, x, "project_instruments");
}

Eigen::MatrixXd sieve_basis(const Eigen::MatrixXd& z, int degree) {
    if (degree < 1) throw std::invalid_argument("sieve_basis: degree must be >= 1");
    const Eigen::Index n = z.rows();
    Eigen::Index cols = 1;  // intercept
    for (Eigen::Index j = 0; j < z.cols(); ++j)
        if (!is_constant_column(z.col(j))) cols += degree;
    Eigen::MatrixXd phi(n, cols);
    phi.col(0).setOnes();
    Eigen::Index at = 1;
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        if (is_constant_column(z.col(j))) continue;
        Eigen::VectorXd p = z.col(j);
        for (int k = 1; k <= degree; ++k) {
            phi.col(at++) = p;
            if (k < degree) p = p.cwiseProduct(z.col(j));
        }
    }
    return phi;
}

Eigen::MatrixXd sieve_instruments(const Eigen::MatrixXd& x, const Eigen::MatrixXd& z, int degree) {
    const Eigen::MatrixXd phi = sieve_basis(z, degree);
    if (phi.cols() < x.cols())
        throw std::invalid_argument("sieve_instruments: basis smaller than regressor count");
    try {
        return project_onto(phi, x, "sieve_instruments");
    } catch (const std::runtime_error&) {
        throw std::runtime_error(
            "sieve_instruments: polynomial basis is collinear (condition > 1e12); reduce the sieve degree");
    }
}

}  // namespace ivqr
