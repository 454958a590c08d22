#include "ivqr/kernels.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <stdexcept>
#include <string>

namespace ivqr {

namespace {

// G(u) = 0.5 + (105/64)(u - (5/3)u^3 + (7/5)u^5 - (3/7)u^7) on [-1,1]
double horowitz_g(double u) {
    if (u <= -1.0) return 0.0;
    if (u >= 1.0) return 1.0;
    const double u2 = u * u;
    return 0.5 + 1.640625 * u * (1.0 + u2 * (-5.0 / 3.0 + u2 * (7.0 / 5.0 - u2 * (3.0 / 7.0))));
}

// G'(u) = (105/64)(1 - 5u^2 + 7u^4 - 3u^6) on [-1,1]
double horowitz_g_prime(double u) {
    if (u <= -1.0 || u >= 1.0) return 0.0;
    const double u2 = u * u;
    return 1.640625 * (1.0 + u2 * (-5.0 + u2 * (7.0 - 3.0 * u2)));
}

double epanechnikov_g(double u) {
    if (u <= -1.0) return 0.0;
    if (u >= 1.0) return 1.0;
    return 0.5 + u * (0.75 - 0.25 * u * u);
}

double epanechnikov_g_prime(double u) {
    if (u <= -1.0 || u >= 1.0) return 0.0;
    return 0.75 * (1.0 - u * u);
}

double uniform_g(double u) {
    if (u <= -1.0) return 0.0;
    if (u >= 1.0) return 1.0;
    return 0.5 * (u + 1.0);
}

double uniform_g_prime(double u) {
    if (u <= -1.0 || u >= 1.0) return 0.0;
    return 0.5;
}

const SmoothingKernel kHorowitz{"horowitz4", 4, horowitz_g, horowitz_g_prime};
const SmoothingKernel kEpanechnikov{"epanechnikov2", 2, epanechnikov_g, epanechnikov_g_prime};
const SmoothingKernel kUniform{"uniform2", 2, uniform_g, uniform_g_prime};

template <typename F>
double quad(F f) {
    using boost::math::quadrature::gauss_kronrod;
    return gauss_kronrod<double, 31>::integrate(f, -1.0, 1.0, 12, 1e-12);
}

}  // namespace

const SmoothingKernel& horowitz_kernel() { return kHorowitz; }
const SmoothingKernel& epanechnikov_kernel() { return kEpanechnikov; }
const SmoothingKernel& uniform_kernel() { return kUniform; }

const SmoothingKernel& kernel_by_name(std::string_view name) {
    if (name == kHorowitz.name) return kHorowitz;
    if (name == kEpanechnikov.name) return kEpanechnikov;
    if (name == kUniform.name) return kUniform;
    throw std::invalid_argument("unknown kernel: " + std::string(name));
}

double kernel_moment(int k, const SmoothingKernel& kernel) {
    if (k < 0 || k > 8) throw std::invalid_argument("kernel_moment: k must be in [0, 8]");
    auto gp = kernel.g_prime;
    return quad([k, gp](double v) { return std::pow(v, k) * gp(v); });
}

KernelConstants kernel_constants(const SmoothingKernel& kernel) {
    KernelConstants c;
    c.moment_r = kernel_moment(kernel.r, kernel);
    auto g = kernel.g;
    auto gp = kernel.g_prime;
    c.one_minus_g_sq = 1.0 - quad([g](double u) { return g(u) * g(u); });
    c.gprime_v_sq = quad([gp](double v) {
        const double t = gp(v) * v;
        return t * t;
    });
    c.g_prime_at_zero = gp(0.0);
    if (!(c.one_minus_g_sq > 0.0))
        throw std::domain_error("kernel_constants: 1 - integral of G^2 must be positive");
    return c;
}

}  // namespace ivqr
