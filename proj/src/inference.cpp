#include "ivqr/inference.hpp"

#include <cmath>
#include <stdexcept>

#include "ivqr/bandwidth.hpp"
#include "ivqr/estimator.hpp"
#include "ivqr/instruments.hpp"
#include "ivqr/probdist.hpp"

namespace ivqr {

Eigen::MatrixXd v_hat(const Dataset& data) {
    const Eigen::MatrixXd zt = project_instruments(data.x, data.z);
    const double n = static_cast<double>(data.n());
    return (data.q * (1.0 - data.q) / n) * (zt.transpose() * zt);
}

double s_statistic(const Eigen::VectorXd& beta0, const Dataset& data, double h,
                   const SmoothingKernel& kernel) {
    const Eigen::VectorXd m = see_moments(beta0, data, h, kernel);
    const Eigen::MatrixXd v = v_hat(data);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw std::runtime_error("s_statistic: instrument second moment is not positive definite");
    // exact value is a nonnegative quadratic form; the clamp absorbs rounding
    return std::max(0.0, m.dot(ldlt.solve(m)));
}

CriticalValues corrected_critical_value(double alpha, int d, int r, double tr_aa, double h_star) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("corrected_critical_value: alpha");
    if (tr_aa < 0.0 || h_star < 0.0) throw std::invalid_argument("corrected_critical_value: negative input");
    CriticalValues cv;
    cv.c_alpha = chi_sq_quantile(1.0 - alpha, d);
    cv.c_plus = (1.0 - 1.0 / (2.0 * r)) * tr_aa;
    const double ratio = chi_sq_pdf(cv.c_alpha, d + 2) / chi_sq_pdf(cv.c_alpha, d);
    cv.c_alpha_star = cv.c_alpha - ratio * cv.c_plus * h_star;
    return cv;
}

double q_power(double c_alpha, double tau_sq, int r, int d) {
    if (tau_sq < 0.0) throw std::invalid_argument("q_power: tau_sq < 0");
    if (tau_sq == 0.0) return 0.0;  // the bracket cancels and the tail carries tau_sq
    const double lead = 1.0 - 1.0 / (2.0 * r);
    const double bracket = noncentral_chi_sq_pdf(c_alpha, d, tau_sq) *
                               (chi_sq_pdf(c_alpha, d + 2) / chi_sq_pdf(c_alpha, d)) -
                           noncentral_chi_sq_pdf(c_alpha, d + 2, tau_sq);
    const double tail = (tau_sq / d) * (noncentral_chi_sq_pdf(c_alpha, d + 4, tau_sq) -
                                        noncentral_chi_sq_pdf(c_alpha, d + 2, tau_sq));
    return lead * bracket - tail;
}

TestResult run_test(const Dataset& data, const Eigen::VectorXd& beta0, double alpha,
                    const SmoothingKernel& kernel, std::optional<double> bandwidth_mode) {
    const int d = static_cast<int>(data.d());
    if (beta0.size() != d) throw std::invalid_argument("run_test: beta0 has the wrong length");

    const BandwidthReport report = plugin_bandwidth(data, data.q, kernel);
    const FitResult* chosen = nullptr;
    for (const auto& [family, candidate] : report.candidates) {
        if (candidate != report.selected) continue;
        for (const FitResult& fit : report.fits)
            if (fit.converged && fit.family.family == family) chosen = &fit;
        break;
    }
    if (chosen == nullptr) throw std::runtime_error("run_test: no density fit behind the bandwidth");
    const SmoothingMoments moments = estimate_moments(data, *chosen, kernel);

    TestResult out;
    out.d = d;
    out.alpha = alpha;
    out.h = bandwidth_mode ? *bandwidth_mode : report.selected;
    out.s_n = s_statistic(beta0, data, out.h, kernel);
    const CriticalValues cv =
        corrected_critical_value(alpha, d, kernel.r, moments.tr_AA, report.selected);
    out.c_alpha = cv.c_alpha;
    out.c_alpha_star = cv.c_alpha_star;
    out.c_plus = cv.c_plus;
    out.p_value = 1.0 - chi_sq_cdf(out.s_n, d);
    out.reject_first_order = out.s_n > out.c_alpha;
    out.reject_corrected = out.s_n > out.c_alpha_star;
    return out;
}

}  // namespace ivqr
