#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <stdexcept>

#include "ivqr/kernels.hpp"
#include "ivqr/rng.hpp"

using namespace ivqr;

namespace {
template <class F>
double integrate(F f, double a, double b) {
    return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 12, 1e-12);
}
}  // namespace

// Exact constants derived independently with rational arithmetic
// (tests/oracle/kernel_constants.py).
namespace oracle {
constexpr double h4_moment4 = -1.0 / 33.0;
constexpr double h4_moment6 = -10.0 / 429.0;
constexpr double h4_one_minus_g_sq = 35.0 / 429.0;
constexpr double h4_gprime_v_sq = 35.0 / 572.0;
constexpr double h4_gprime_at_zero = 105.0 / 64.0;

constexpr double ep_moment2 = 1.0 / 5.0;
constexpr double ep_one_minus_g_sq = 9.0 / 35.0;
constexpr double ep_gprime_v_sq = 3.0 / 35.0;

constexpr double un_moment2 = 1.0 / 3.0;
constexpr double un_one_minus_g_sq = 1.0 / 3.0;
constexpr double un_gprime_v_sq = 1.0 / 6.0;
}  // namespace oracle

TEST_CASE("smoothed cdf boundary and center values") {
    for (const SmoothingKernel* k :
         {&horowitz_kernel(), &epanechnikov_kernel(), &uniform_kernel()}) {
        CHECK(k->g(0.0) == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(k->g(1.0) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(k->g(-1.0) == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(k->g(2.5) == 1.0);
        CHECK(k->g(-3.0) == 0.0);
        CHECK(k->g_prime(1.5) == 0.0);
        CHECK(k->g_prime(-1.5) == 0.0);
    }
    CHECK(horowitz_kernel().g_prime(0.0) == doctest::Approx(oracle::h4_gprime_at_zero).epsilon(1e-15));
    CHECK(epanechnikov_kernel().g_prime(0.0) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(uniform_kernel().g_prime(0.0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("uniform kernel: 2g(u)-1 equals u on the support") {
    const auto& k = uniform_kernel();
    for (int i = 0; i <= 100; ++i) {
        const double u = -1.0 + 0.02 * i;
        CHECK(2.0 * k.g(u) - 1.0 == doctest::Approx(u).epsilon(1e-15));
    }
}

TEST_CASE("moments: low orders vanish, order r matches exact values") {
    const auto& h4 = horowitz_kernel();
    CHECK(std::abs(kernel_moment(0, h4) - 1.0) < 1e-10);
    for (int j = 1; j < h4.r; ++j) CHECK(std::abs(kernel_moment(j, h4)) < 1e-10);
    CHECK(kernel_moment(4, h4) == doctest::Approx(oracle::h4_moment4).epsilon(1e-10));
    CHECK(kernel_moment(6, h4) == doctest::Approx(oracle::h4_moment6).epsilon(1e-10));

    const auto& ep = epanechnikov_kernel();
    CHECK(std::abs(kernel_moment(0, ep) - 1.0) < 1e-10);
    CHECK(std::abs(kernel_moment(1, ep)) < 1e-10);
    CHECK(kernel_moment(2, ep) == doctest::Approx(oracle::ep_moment2).epsilon(1e-10));

    const auto& un = uniform_kernel();
    CHECK(std::abs(kernel_moment(0, un) - 1.0) < 1e-10);
    CHECK(std::abs(kernel_moment(1, un)) < 1e-10);
    CHECK(kernel_moment(2, un) == doctest::Approx(oracle::un_moment2).epsilon(1e-10));

    // the characterizing moment must be bounded away from zero
    for (const SmoothingKernel* k : {&h4, &ep, &un})
        CHECK(std::abs(kernel_moment(k->r, *k)) > 1e-3);

    CHECK_THROWS_AS(kernel_moment(-1, h4), std::invalid_argument);
    CHECK_THROWS_AS(kernel_moment(9, h4), std::invalid_argument);
}

TEST_CASE("kernel density is even") {
    Rng rng(20240817);
    for (const SmoothingKernel* k :
         {&horowitz_kernel(), &epanechnikov_kernel(), &uniform_kernel()}) {
        for (int i = 0; i < 100; ++i) {
            const double v = rng.uniform(-1.2, 1.2);
            CHECK(k->g_prime(v) == k->g_prime(-v));
        }
    }
}

// g must be the antiderivative of g_prime with g(-1)=0.
TEST_CASE("cdf integrates the density") {
    for (const SmoothingKernel* k :
         {&horowitz_kernel(), &epanechnikov_kernel(), &uniform_kernel()}) {
        double worst = 0.0;
        for (int i = 0; i <= 1000; ++i) {
            const double u = -1.0 + 0.002 * i;
            const double integral = integrate(k->g_prime, -1.0, u);
            worst = std::max(worst, std::abs(k->g(u) - integral));
        }
        CHECK(worst < 1e-9);
    }
}

TEST_CASE("constants match the exact rational values") {
    const auto ch = kernel_constants(horowitz_kernel());
    CHECK(ch.moment_r == doctest::Approx(oracle::h4_moment4).epsilon(1e-10));
    CHECK(ch.one_minus_g_sq == doctest::Approx(oracle::h4_one_minus_g_sq).epsilon(1e-10));
    CHECK(ch.gprime_v_sq == doctest::Approx(oracle::h4_gprime_v_sq).epsilon(1e-10));
    CHECK(ch.g_prime_at_zero == doctest::Approx(oracle::h4_gprime_at_zero).epsilon(1e-15));
    CHECK(ch.gprime_v_sq == doctest::Approx(0.061).epsilon(0.02));

    const auto ce = kernel_constants(epanechnikov_kernel());
    CHECK(ce.moment_r == doctest::Approx(oracle::ep_moment2).epsilon(1e-10));
    CHECK(ce.one_minus_g_sq == doctest::Approx(oracle::ep_one_minus_g_sq).epsilon(1e-10));
    CHECK(ce.gprime_v_sq == doctest::Approx(oracle::ep_gprime_v_sq).epsilon(1e-10));

    const auto cu = kernel_constants(uniform_kernel());
    CHECK(cu.moment_r == doctest::Approx(oracle::un_moment2).epsilon(1e-10));
    CHECK(cu.one_minus_g_sq == doctest::Approx(oracle::un_one_minus_g_sq).epsilon(1e-10));
    CHECK(cu.gprime_v_sq == doctest::Approx(oracle::un_gprime_v_sq).epsilon(1e-10));
}

// integration by parts: 1 - int G^2 = 2 int_0^1 u G'(u) [G(u) - G(-u)] du
TEST_CASE("variance constant satisfies the parts identity") {
    for (const SmoothingKernel* k :
         {&horowitz_kernel(), &epanechnikov_kernel(), &uniform_kernel()}) {
        const auto c = kernel_constants(*k);
        const double rhs = 2.0 * integrate(
            [k](double u) { return u * k->g_prime(u) * (k->g(u) - k->g(-u)); }, 0.0, 1.0);
        CHECK(c.one_minus_g_sq == doctest::Approx(rhs).epsilon(1e-9));
        CHECK(c.one_minus_g_sq > 0.0);
    }
}

TEST_CASE("registry lookup") {
    CHECK(&kernel_by_name("horowitz4") == &horowitz_kernel());
    CHECK(&kernel_by_name("epanechnikov2") == &epanechnikov_kernel());
    CHECK(&kernel_by_name("uniform2") == &uniform_kernel());
    CHECK(horowitz_kernel().r == 4);
    CHECK(epanechnikov_kernel().r == 2);
    CHECK(uniform_kernel().r == 2);
    CHECK_THROWS_AS(kernel_by_name("triweight"), std::invalid_argument);
}
