#pragma once

#include <string_view>
#include <vector>

namespace ivqr {

// Central chi-square CDF, abs error < 1e-10.  Throws domain_error for x < 0.
double chi_sq_cdf(double x, int d);

// Central chi-square density.
double chi_sq_pdf(double x, int d);

// Inverse of chi_sq_cdf by bracketed bisection, tol 1e-9.  Requires 0 < p < 1.
double chi_sq_quantile(double p, int d);

// Noncentral chi-square as a Poisson mixture of central terms, summed outward
// from the Poisson mode until the weight ratio drops below 1e-14.  lambda = 0
// falls through to the central routine exactly.
double noncentral_chi_sq_pdf(double x, int d, double lambda);
double noncentral_chi_sq_cdf(double x, int d, double lambda);

enum class Family { gaussian, student_t, gamma, gev };

const char* family_name(Family f);
Family family_by_name(std::string_view name);

// Parametric density on the residual scale.  `shift` maps residuals into the
// family's native support: the density of residual u is pdf_native(u + shift).
// params: gaussian {mu, sigma}; student_t {mu, sigma, nu}; gamma {shape, scale};
// gev {mu, sigma, xi}.  shift is nonzero only for gamma.
struct DensityFamily {
    Family family = Family::gaussian;
    std::vector<double> params;
    double shift = 0.0;
};

struct FitResult {
    DensityFamily family;
    double loglik = 0.0;
    double f0 = 0.0;                 // density at residual 0
    double f_r_minus_1_at_0 = 0.0;   // third derivative at 0 (fourth-order kernel convention)
    bool converged = false;
};

// Fitted density evaluated at residual value u.
double density_at(const DensityFamily& density, double u);

// Maximum likelihood fit of one family to SEE residuals.  Gaussian is closed
// form; the rest use Nelder-Mead (500-iteration cap) from method-of-moments
// starts.  Gamma is fitted to residuals shifted above zero and the shift is
// stored.  Requires >= 10 non-constant residuals.  A support violation or
// optimizer failure comes back with converged = false.
FitResult mle_fit(Family family, const std::vector<double>& residuals, double q);

// f^(order)(0) of the fitted density, order <= 4.  Closed form for gaussian;
// otherwise Richardson-extrapolated central differences with step
// max(1e-3 * scale, 1e-5).  Returns NaN when the density is not finite near 0.
double density_deriv_at_zero(const FitResult& fit, int order);

}  // namespace ivqr
