#pragma once

#include <string_view>

namespace ivqr {

// Smooth CDF-like transition function G and its kernel derivative G'.
// G is 0 below -1 and 1 above +1; G' is even and supported on [-1,1].
struct SmoothingKernel {
    const char* name;
    int r;  // kernel order: moments 1..r-1 of G' vanish, moment r does not
    double (*g)(double);
    double (*g_prime)(double);
};

// Integrals of the kernel that enter the bandwidth and critical-value formulas.
struct KernelConstants {
    double moment_r;          // integral of v^r G'(v) over [-1,1]
    double one_minus_g_sq;    // 1 - integral of G(u)^2 over [-1,1]
    double gprime_v_sq;       // integral of [G'(v) v]^2 over [-1,1]
    double g_prime_at_zero;   // G'(0)
};

const SmoothingKernel& horowitz_kernel();       // r = 4, degree-7 polynomial G
const SmoothingKernel& epanechnikov_kernel();   // r = 2
const SmoothingKernel& uniform_kernel();        // r = 2, G linear on [-1,1]

// Lookup by registry name ("horowitz4", "epanechnikov2", "uniform2").
// Throws std::invalid_argument for unknown names.
const SmoothingKernel& kernel_by_name(std::string_view name);

// integral of v^k G'(v) dv over [-1,1] by adaptive quadrature (abs tol 1e-12).
// Requires 0 <= k <= 8.
double kernel_moment(int k, const SmoothingKernel& kernel);

// All four constants by quadrature. Throws std::domain_error if the computed
// one_minus_g_sq is not strictly positive.
KernelConstants kernel_constants(const SmoothingKernel& kernel);

}  // namespace ivqr
