#include "ivqr/probdist.hpp"

#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace ivqr {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kEulerGamma = 0.57721566490153286;

double nm_eval(const gsl_vector* v, void* p) {
    auto* f = static_cast<std::function<double(const double*)>*>(p);
    return (*f)(v->data);
}

// Nelder-Mead (nmsimplex2) with a 500-iteration cap.  Minimizes f in place.
bool nelder_mead(std::vector<double>& x, std::function<double(const double*)> f,
                 double step = 0.1, int max_iter = 500) {
    const std::size_t n = x.size();
    gsl_multimin_function mf;
    mf.n = n;
    mf.f = &nm_eval;
    mf.params = &f;
    gsl_vector* xv = gsl_vector_alloc(n);
    gsl_vector* sv = gsl_vector_alloc(n);
    for (std::size_t i = 0; i < n; ++i) {
        gsl_vector_set(xv, i, x[i]);
        gsl_vector_set(sv, i, step);
    }
    gsl_multimin_fminimizer* s =
        gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
    gsl_multimin_fminimizer_set(s, &mf, xv, sv);
    bool converged = false;
    for (int it = 0; it < max_iter; ++it) {
        if (gsl_multimin_fminimizer_iterate(s) != 0) break;
        if (gsl_multimin_fminimizer_size(s) < 1e-8) {
            converged = true;
            break;
        }
    }
    for (std::size_t i = 0; i < n; ++i) x[i] = gsl_vector_get(s->x, i);
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(xv);
    gsl_vector_free(sv);
    return converged;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v, double mu) {
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size()));
}

// objective floor for invalid parameter regions; finite so the simplex can recover
constexpr double kPenalty = 1e10;

double neg_loglik_t(const std::vector<double>& r, double mu, double sigma, double nu) {
    if (!(sigma > 0.0) || !(nu > 2.0)) return kPenalty;
    const double n = static_cast<double>(r.size());
    double s = 0.0;
    for (double x : r) {
        const double z = (x - mu) / sigma;
        s += std::log1p(z * z / nu);
    }
    const double ll = n * (std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                           0.5 * std::log(nu * kPi) - std::log(sigma)) -
                      0.5 * (nu + 1.0) * s;
    return std::isfinite(ll) ? -ll : kPenalty;
}

double neg_loglik_gamma(const std::vector<double>& w, double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0)) return kPenalty;
    double s = 0.0;
    for (double x : w) s += (shape - 1.0) * std::log(x) - x / scale;
    const double n = static_cast<double>(w.size());
    const double ll = s - n * (std::lgamma(shape) + shape * std::log(scale));
    return std::isfinite(ll) ? -ll : kPenalty;
}

double neg_loglik_gev(const std::vector<double>& r, double mu, double sigma, double xi) {
    if (!(sigma > 0.0)) return kPenalty;
    double ll = 0.0;
    double violation = 0.0;
    for (double x : r) {
        const double z = (x - mu) / sigma;
        if (std::abs(xi) < 1e-8) {
            ll += -std::log(sigma) - z - std::exp(-z);
        } else {
            const double t = 1.0 + xi * z;
            if (t <= 0.0) {
                violation += -t + 1e-3;
                continue;
            }
            ll += -std::log(sigma) - (1.0 + 1.0 / xi) * std::log(t) - std::pow(t, -1.0 / xi);
        }
    }
    if (violation > 0.0) return kPenalty * (1.0 + violation);
    return std::isfinite(ll) ? -ll : kPenalty;
}

// nu in [2.01, 100] via a logistic map so the simplex runs unconstrained
double nu_from_raw(double a) { return 2.01 + 97.99 / (1.0 + std::exp(-a)); }
double raw_from_nu(double nu) {
    const double s = std::clamp((nu - 2.01) / 97.99, 1e-6, 1.0 - 1e-6);
    return std::log(s / (1.0 - s));
}

double scale_param(const DensityFamily& f) {
    switch (f.family) {
        case Family::gaussian:
        case Family::student_t:
        case Family::gev:
            return f.params[1];
        case Family::gamma:
            return f.params[1];
    }
    return 1.0;
}

// distance from residual 0 to the nearest support boundary; +inf when unbounded
double support_clearance(const DensityFamily& f) {
    const double inf = std::numeric_limits<double>::infinity();
    if (f.family == Family::gamma) return f.shift;  // support is residual > -shift
    if (f.family == Family::gev) {
        const double mu = f.params[0], sigma = f.params[1], xi = f.params[2];
        if (std::abs(xi) < 1e-8) return inf;
        return std::abs(mu - sigma / xi);
    }
    return inf;
}

}  // namespace

double chi_sq_cdf(double x, int d) {
    if (d < 1) throw std::invalid_argument("chi_sq_cdf: d must be >= 1");
    if (x < 0.0) throw std::domain_error("chi_sq_cdf: x must be >= 0");
    if (x == 0.0) return 0.0;
    return boost::math::gamma_p(0.5 * d, 0.5 * x);
}

double chi_sq_pdf(double x, int d) {
    if (d < 1) throw std::invalid_argument("chi_sq_pdf: d must be >= 1");
    if (x < 0.0) return 0.0;
    if (x == 0.0) return d == 2 ? 0.5 : (d < 2 ? std::numeric_limits<double>::infinity() : 0.0);
    const double a = 0.5 * d;
    return std::exp((a - 1.0) * std::log(x) - 0.5 * x - a * std::numbers::ln2 - std::lgamma(a));
}

double chi_sq_quantile(double p, int d) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("chi_sq_quantile: p must be in (0,1)");
    double hi = static_cast<double>(d);
    while (chi_sq_cdf(hi, d) < p) {
        hi *= 2.0;
        if (hi > 1e12) throw std::runtime_error("chi_sq_quantile: bracket failure");
    }
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (chi_sq_cdf(mid, d) < p)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-12 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

namespace {

// Poisson mixture over central chi-square terms, summed outward from the mode.
template <class Central>
double poisson_mixture(double x, int d, double lambda, Central central) {
    const double hl = 0.5 * lambda;
    const long k0 = static_cast<long>(hl);
    const double lw0 = -hl + static_cast<double>(k0) * std::log(hl) -
                       std::lgamma(static_cast<double>(k0) + 1.0);
    const double w0 = std::exp(lw0);
    double total = w0 * central(x, d + 2 * static_cast<int>(k0));
    double w = w0;
    for (long k = k0 + 1;; ++k) {
        w *= hl / static_cast<double>(k);
        if (w < 1e-14 * w0) break;
        total += w * central(x, d + 2 * static_cast<int>(k));
    }
    w = w0;
    for (long k = k0; k > 0; --k) {
        w *= static_cast<double>(k) / hl;
        if (w < 1e-14 * w0) break;
        total += w * central(x, d + 2 * static_cast<int>(k - 1));
    }
    return total;
}

}  // namespace

double noncentral_chi_sq_pdf(double x, int d, double lambda) {
    if (lambda < 0.0) throw std::domain_error("noncentral_chi_sq_pdf: lambda must be >= 0");
    if (lambda == 0.0) return chi_sq_pdf(x, d);
    if (x < 0.0) return 0.0;
    return poisson_mixture(x, d, lambda, [](double xx, int dd) { return chi_sq_pdf(xx, dd); });
}

double noncentral_chi_sq_cdf(double x, int d, double lambda) {
    if (lambda < 0.0) throw std::domain_error("noncentral_chi_sq_cdf: lambda must be >= 0");
    if (lambda == 0.0) return chi_sq_cdf(x, d);
    return poisson_mixture(x, d, lambda, [](double xx, int dd) { return chi_sq_cdf(xx, dd); });
}

const char* family_name(Family f) {
    switch (f) {
        case Family::gaussian: return "gaussian";
        case Family::student_t: return "student_t";
        case Family::gamma: return "gamma";
        case Family::gev: return "gev";
    }
    return "?";
}

Family family_by_name(std::string_view name) {
    if (name == "gaussian") return Family::gaussian;
    if (name == "student_t") return Family::student_t;
    if (name == "gamma") return Family::gamma;
    if (name == "gev") return Family::gev;
    throw std::invalid_argument("unknown density family: " + std::string(name));
}

double density_at(const DensityFamily& f, double u) {
    const double w = u + f.shift;
    switch (f.family) {
        case Family::gaussian: {
            const double z = (w - f.params[0]) / f.params[1];
            return std::exp(-0.5 * z * z) / (f.params[1] * std::sqrt(2.0 * kPi));
        }
        case Family::student_t: {
            const double sigma = f.params[1], nu = f.params[2];
            const double z = (w - f.params[0]) / sigma;
            const double lc = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                              0.5 * std::log(nu * kPi);
            return std::exp(lc - 0.5 * (nu + 1.0) * std::log1p(z * z / nu)) / sigma;
        }
        case Family::gamma: {
            const double shape = f.params[0], scale = f.params[1];
            if (w <= 0.0) return 0.0;
            return std::exp((shape - 1.0) * std::log(w) - w / scale - std::lgamma(shape) -
                            shape * std::log(scale));
        }
        case Family::gev: {
            const double mu = f.params[0], sigma = f.params[1], xi = f.params[2];
            const double z = (w - mu) / sigma;
            if (std::abs(xi) < 1e-8) {
                const double e = std::exp(-z);
                return e * std::exp(-e) / sigma;
            }
            const double t = 1.0 + xi * z;
            if (t <= 0.0) return 0.0;
            return std::pow(t, -1.0 - 1.0 / xi) * std::exp(-std::pow(t, -1.0 / xi)) / sigma;
        }
    }
    return 0.0;
}

FitResult mle_fit(Family family, const std::vector<double>& residuals, [[maybe_unused]] double q) {
    const std::size_t n = residuals.size();
    if (n < 10) throw std::invalid_argument("mle_fit: need at least 10 residuals");
    const double mu = mean_of(residuals);
    const double sd = sd_of(residuals, mu);
    if (!(sd > 1e-12)) throw std::invalid_argument("mle_fit: residuals are constant");

    FitResult out;
    out.family.family = family;

    switch (family) {
        case Family::gaussian: {
            out.family.params = {mu, sd};
            out.loglik = -0.5 * static_cast<double>(n) * (std::log(2.0 * kPi * sd * sd) + 1.0);
            out.converged = true;
            break;
        }
        case Family::student_t: {
            // kurtosis-matched start for nu, variance-matched scale
            double m4 = 0.0;
            for (double x : residuals) m4 += std::pow(x - mu, 4);
            m4 /= static_cast<double>(n) * std::pow(sd, 4);
            const double ex = m4 - 3.0;
            double nu0 = ex > 0.3 ? 4.0 + 6.0 / ex : 30.0;
            nu0 = std::clamp(nu0, 2.5, 90.0);
            const double sigma0 = sd * std::sqrt(std::max(0.05, (nu0 - 2.0) / nu0));
            std::vector<double> p = {mu, std::log(sigma0), raw_from_nu(nu0)};
            const bool ok = nelder_mead(p, [&](const double* v) {
                return neg_loglik_t(residuals, v[0], std::exp(v[1]), nu_from_raw(v[2]));
            });
            const double sigma = std::exp(p[1]), nu = nu_from_raw(p[2]);
            out.family.params = {p[0], sigma, nu};
            out.loglik = -neg_loglik_t(residuals, p[0], sigma, nu);
            out.converged = ok;
            break;
        }
        case Family::gamma: {
            const double rmin = *std::min_element(residuals.begin(), residuals.end());
            const double rmax = *std::max_element(residuals.begin(), residuals.end());
            const double delta = 0.01 * (rmax - rmin);
            out.family.shift = delta - rmin;  // shifted data = residual + shift, all >= delta
            std::vector<double> w(residuals);
            for (double& x : w) x += out.family.shift;
            const double wm = mean_of(w);
            const double wsd = sd_of(w, wm);
            const double k0 = std::clamp(wm * wm / (wsd * wsd), 1e-2, 1e4);
            const double th0 = wsd * wsd / wm;
            std::vector<double> p = {std::log(k0), std::log(th0)};
            const bool ok = nelder_mead(p, [&](const double* v) {
                return neg_loglik_gamma(w, std::exp(v[0]), std::exp(v[1]));
            });
            out.family.params = {std::exp(p[0]), std::exp(p[1])};
            out.loglik = -neg_loglik_gamma(w, out.family.params[0], out.family.params[1]);
            out.converged = ok;
            break;
        }
        case Family::gev: {
            const double sigma0 = sd * std::sqrt(6.0) / kPi;
            const double mu0 = mu - kEulerGamma * sigma0;
            std::vector<double> p = {mu0, std::log(sigma0), 0.1};
            const bool ok = nelder_mead(p, [&](const double* v) {
                return neg_loglik_gev(residuals, v[0], std::exp(v[1]), v[2]);
            });
            out.family.params = {p[0], std::exp(p[1]), p[2]};
            out.loglik = -neg_loglik_gev(residuals, p[0], out.family.params[1], p[2]);
            out.converged = ok;
            break;
        }
    }

    out.f0 = density_at(out.family, 0.0);
    if (!(out.f0 > 0.0) || !std::isfinite(out.f0)) out.converged = false;
    out.f_r_minus_1_at_0 = density_deriv_at_zero(out, 3);
    if (!std::isfinite(out.f_r_minus_1_at_0)) out.converged = false;
    return out;
}

double density_deriv_at_zero(const FitResult& fit, int order) {
    if (order < 0 || order > 4) throw std::invalid_argument("density_deriv_at_zero: order must be <= 4");
    const DensityFamily& f = fit.family;

    if (f.family == Family::gaussian) {
        const double mu = f.params[0], sigma = f.params[1];
        const double z = -mu / sigma;
        const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi);
        double he = 1.0;  // probabilists' Hermite He_order(z)
        switch (order) {
            case 0: he = 1.0; break;
            case 1: he = z; break;
            case 2: he = z * z - 1.0; break;
            case 3: he = z * (z * z - 3.0); break;
            case 4: he = z * z * (z * z - 6.0) + 3.0; break;
        }
        const double sign = (order % 2 == 0) ? 1.0 : -1.0;
        return sign * he * phi / std::pow(sigma, order + 1);
    }

    if (order == 0) return density_at(f, 0.0);

    double h = std::max(1e-3 * scale_param(f), 1e-5);
    const double clearance = support_clearance(f);
    if (clearance < 4e-5) return std::numeric_limits<double>::quiet_NaN();
    if (2.5 * h > clearance) h = 0.25 * clearance;

    const auto pdf = [&f](double u) { return density_at(f, u); };
    const auto stencil = [&](double hh) -> double {
        switch (order) {
            case 1: return (pdf(hh) - pdf(-hh)) / (2.0 * hh);
            case 2: return (pdf(hh) - 2.0 * pdf(0.0) + pdf(-hh)) / (hh * hh);
            case 3:
                return (pdf(2.0 * hh) - 2.0 * pdf(hh) + 2.0 * pdf(-hh) - pdf(-2.0 * hh)) /
                       (2.0 * hh * hh * hh);
            default:
                return (pdf(2.0 * hh) - 4.0 * pdf(hh) + 6.0 * pdf(0.0) - 4.0 * pdf(-hh) +
                        pdf(-2.0 * hh)) /
                       (hh * hh * hh * hh);
        }
    };
    // two Richardson levels over the O(h^2) central stencils
    const double a1 = stencil(h), a2 = stencil(0.5 * h), a3 = stencil(0.25 * h);
    if (!std::isfinite(a1) || !std::isfinite(a2) || !std::isfinite(a3))
        return std::numeric_limits<double>::quiet_NaN();
    const double r1 = (4.0 * a2 - a1) / 3.0;
    const double r2 = (4.0 * a3 - a2) / 3.0;
    return (16.0 * r2 - r1) / 15.0;
}

}  // namespace ivqr
