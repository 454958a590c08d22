#pragma once

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <vector>

#include "ivqr/dataset.hpp"
#include "ivqr/kernels.hpp"
#include "ivqr/probdist.hpp"

namespace ivqr {

// Asymptotic-MSE bias term is exactly zero; the 0.01 guard must be applied
// upstream before calling the general formula.
struct ZeroBias final : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AllFitsFailed final : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SmoothingMoments {
    double tr_AA = 0.0;        // trace E(AA')
    double BB = 0.0;           // E(B)'E(B)
    Eigen::MatrixXd EAA;       // E(AA'), d x d
    Eigen::VectorXd EB;        // E(B), d
    Eigen::MatrixXd V;         // q(1-q) E(ZZ'), d x d
    Eigen::MatrixXd sigma_zx;  // optional, d x d
};

struct BandwidthReport {
    double h0 = 0.0;                       // pilot bandwidth (2nr)^{-1/(2r-1)}
    std::vector<FitResult> fits;           // all four families, failures included
    std::map<Family, double> candidates;   // converged families only
    double selected = 0.0;                 // min over candidates
    bool substituted_zero_derivative = false;
};

// (tr_AA / BB * 1/(2nr))^{1/(2r-1)}.  Throws ZeroBias when BB = 0.
double h_star_general(const SmoothingMoments& moments, int n, int r);

// iid simplification: ((r!)^2 * one_minus_g_sq * f0 / (2r * moment_r^2 * f_r1^2) * d/n)^{1/(2r-1)}.
// |f_r1| < 1e-12 is replaced by 0.01; *substituted reports the replacement.
double h_star_iid(double f0, double f_r1, int d, int n, const SmoothingKernel& kernel,
                  bool* substituted = nullptr);

// [n^{-1} sum z_j' S^{-1} z_j] / [zbar' S^{-1} zbar] with S = n^{-1} sum z z'.
// Equals d whenever z has full rank and an intercept column.
double lemma_ratio(const Eigen::MatrixXd& z);

// Bandwidth minimizing the summed directional AMSE over the given c vectors,
// u_i = (V^{1/2})' (sigma_zx')^{-1} c_i.  A zero denominator gets the same
// 0.01-magnitude substitution as the iid path, flagged via *substituted.
double h_directional(const std::vector<Eigen::VectorXd>& c_vectors,
                     const SmoothingMoments& moments, int n, int r,
                     bool* substituted = nullptr);

// Plug-in moments under U independent of Z, from a parametric residual fit.
SmoothingMoments estimate_moments(const Dataset& data, const FitResult& fit,
                                  const SmoothingKernel& kernel);

// Full plug-in pipeline: pilot solve at h0, MLE residual fits in all four
// families, a candidate bandwidth per converged fit, smallest one selected.
BandwidthReport plugin_bandwidth(const Dataset& data, double q, const SmoothingKernel& kernel);

}  // namespace ivqr
