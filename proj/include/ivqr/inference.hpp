#pragma once

#include <Eigen/Dense>
#include <optional>

#include "ivqr/dataset.hpp"
#include "ivqr/kernels.hpp"

namespace ivqr {

struct TestResult {
    double s_n = 0.0;
    int d = 0;
    double alpha = 0.0;
    double c_alpha = 0.0;
    double c_alpha_star = 0.0;
    bool reject_first_order = false;
    bool reject_corrected = false;
    double p_value = 1.0;
    double h = 0.0;
    double c_plus = 0.0;
};

struct CriticalValues {
    double c_alpha = 0.0;
    double c_alpha_star = 0.0;
    double c_plus = 0.0;
};

// q(1-q) n^{-1} sum Z~_j Z~_j' over the projected instruments.
Eigen::MatrixXd v_hat(const Dataset& data);

// Score statistic m_n(beta0)' V^{-1} m_n(beta0), linear solve inside.
double s_statistic(const Eigen::VectorXd& beta0, const Dataset& data, double h,
                   const SmoothingKernel& kernel);

// First-order chi-square critical value and its high-order correction
// c* = c - [g_{d+2}(c)/g_d(c)] C+ h_star with C+ = (1 - 1/(2r)) tr_AA.
CriticalValues corrected_critical_value(double alpha, int d, int r, double tr_aa, double h_star);

// Leading local-power coefficient built from noncentral chi-square densities;
// identically zero at tau_sq = 0.
double q_power(double c_alpha, double tau_sq, int r, int d);

// Full test of H0: beta = beta0.  bandwidth_mode empty selects the plug-in
// bandwidth; a value fixes the statistic's h (the correction always uses the
// plug-in h_star and moments).
TestResult run_test(const Dataset& data, const Eigen::VectorXd& beta0, double alpha,
                    const SmoothingKernel& kernel,
                    std::optional<double> bandwidth_mode = std::nullopt);

}  // namespace ivqr
