#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivqr/dataset.hpp"
#include "ivqr/kernels.hpp"

namespace ivqr {

struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// All residuals left the kernel window and no rescue applied.
struct SingularJacobian final : SolverError {
    using SolverError::SolverError;
};

struct MaxIterations final : SolverError {
    using SolverError::SolverError;
};

struct EndogenousNotSupported final : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct SolverOptions {
    double tol = 1e-10;          // on the moment norm, scaled by sqrt(n)(1+|beta|)
    int max_iter = 100;
    double damping = 0.5;        // line-search contraction
    bool continuation = true;    // rescue stalls by re-solving at inflated h
    double ladder_factor = 0.5;  // h shrink factor when walking back down
};

struct ContinuationStep {
    double h;
    Eigen::VectorXd beta;
};

struct SeeFit {
    Eigen::VectorXd beta;
    double h = 0.0;
    std::string kernel;
    Eigen::VectorXd residuals;  // y - x beta
    double moment_norm = 0.0;
    int iterations = 0;
    std::vector<ContinuationStep> path;  // empty when the direct solve succeeded
};

// m_n(beta) = n^{-1/2} sum_j ztilde_j [G((x_j'beta - y_j)/h) - q], with
// ztilde the projection of x on z.
Eigen::VectorXd see_moments(const Eigen::VectorXd& beta, const Dataset& data, double h,
                            const SmoothingKernel& kernel);

// Exact derivative of see_moments: n^{-1/2} sum_j ztilde_j x_j' G'((x_j'beta - y_j)/h)/h.
Eigen::MatrixXd see_jacobian(const Eigen::VectorXd& beta, const Dataset& data, double h,
                             const SmoothingKernel& kernel);

// Damped Newton on m_n with the analytic Jacobian, initialized at the IV
// estimate.  A stall (no norm reduction after 30 step halvings, or a dead
// Jacobian the local recovery cannot fix) triggers bandwidth continuation:
// solve at h*2^k for the smallest k >= 1 that succeeds, then walk h back down
// by ladder_factor, warm-starting each step.
SeeFit solve_see(const Dataset& data, double h, const SmoothingKernel& kernel,
                 const std::optional<Eigen::VectorXd>& init = std::nullopt,
                 const SolverOptions& opts = SolverOptions{});

// (ztilde'x)^{-1} ztilde'y: OLS when z = x, 2SLS otherwise.
Eigen::VectorXd iv_estimate(const Dataset& data);

// SEE solution at h_tiny = 0.01 * residual spread / n, reached by
// continuation from the plug-in bandwidth.  The h -> 0 comparator.
// Defined alongside the bandwidth selector.
Eigen::VectorXd unsmoothed_qr_reference(const Dataset& data, double q);

// Smoothed criterion-function estimator (exogenous only, z = x): solves
// 0 = n^{-1} sum_i x_i [G(v_i) - q + v_i G'(v_i)], v_i = (x_i'beta - y_i)/h,
// by Newton with a numerically differentiated Jacobian.
Eigen::VectorXd scf_estimate(const Dataset& data, double q, double h,
                             const SmoothingKernel& kernel);

}  // namespace ivqr
