#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "ivqr/estimator.hpp"
#include "ivqr/kernels.hpp"
#include "ivqr/rng.hpp"

using namespace ivqr;

namespace {

// y symmetric around c so the q=0.5 SEE root is exactly c
Dataset symmetric_intercept_data(double c, int half_n) {
    Dataset d;
    const int n = 2 * half_n;
    d.y.resize(n);
    for (int i = 0; i < half_n; ++i) {
        const double a = 0.1 + 1.9 * i / static_cast<double>(half_n);
        d.y(2 * i) = c - a;
        d.y(2 * i + 1) = c + a;
    }
    d.x = Eigen::MatrixXd::Ones(n, 1);
    d.z = d.x;
    d.q = 0.5;
    return d;
}

Dataset linear_exogenous(Rng& rng, int n, double b0, double b1) {
    Dataset d;
    d.y.resize(n);
    d.x.resize(n, 2);
    for (int i = 0; i < n; ++i) {
        const double xi = rng.uniform(1.0, 5.0);
        d.x(i, 0) = 1.0;
        d.x(i, 1) = xi;
        d.y(i) = b0 + b1 * xi + rng.normal();
    }
    d.z = d.x;
    d.q = 0.5;
    return d;
}

}  // namespace

TEST_CASE("moment vector: saturation and symmetry") {
    Dataset d = symmetric_intercept_data(2.0, 20);
    const auto& k = horowitz_kernel();

    Eigen::VectorXd beta(1);
    beta << 2.0;
    const Eigen::VectorXd m = see_moments(beta, d, 1e6, k);
    CHECK(std::abs(m(0)) < 1e-12);

    // all residuals above h: G saturates at 0, m = -q sqrt(n)
    beta << -100.0;
    const Eigen::VectorXd msat = see_moments(beta, d, 1.0, k);
    CHECK(msat(0) == doctest::Approx(-0.5 * std::sqrt(40.0)).epsilon(1e-15));
}

TEST_CASE("moment vector matches a naive re-summation") {
    Rng rng(99);
    Dataset d = linear_exogenous(rng, 37, 1.0, 0.7);
    d.q = 0.3;
    const auto& k = epanechnikov_kernel();
    Eigen::VectorXd beta(2);
    beta << 0.8, 0.65;
    const double h = 0.9;

    const Eigen::VectorXd m = see_moments(beta, d, h, k);

    // independent accumulation: reversed order, coordinate-major
    Eigen::VectorXd oracle = Eigen::VectorXd::Zero(2);
    for (int c = 0; c < 2; ++c) {
        double acc = 0.0;
        for (int i = 36; i >= 0; --i) {
            const double v = (d.x(i, 0) * beta(0) + d.x(i, 1) * beta(1) - d.y(i)) / h;
            acc += d.x(i, c) * (k.g(v) - d.q);
        }
        oracle(c) = acc / std::sqrt(37.0);
    }
    CHECK((m - oracle).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("jacobian is the derivative of the moment vector") {
    Rng rng(1);
    Dataset d = linear_exogenous(rng, 50, 1.0, 1.0);
    const auto& k = horowitz_kernel();
    const double h = 1.2;

    for (int trial = 0; trial < 5; ++trial) {
        Eigen::VectorXd beta(2);
        beta << 1.0 + 0.3 * rng.normal(), 1.0 + 0.3 * rng.normal();
        const Eigen::MatrixXd jac = see_jacobian(beta, d, h, k);
        Eigen::MatrixXd fd(2, 2);
        for (int c = 0; c < 2; ++c) {
            const double eps = 1e-6 * (1.0 + std::abs(beta(c)));
            Eigen::VectorXd bp = beta, bm = beta;
            bp(c) += eps;
            bm(c) -= eps;
            fd.col(c) = (see_moments(bp, d, h, k) - see_moments(bm, d, h, k)) / (2.0 * eps);
        }
        const double rel = (jac - fd).cwiseAbs().maxCoeff() / jac.cwiseAbs().maxCoeff();
        CHECK(rel < 1e-6);
    }

    // dead window: zero matrix exactly
    Eigen::VectorXd far(2);
    far << -500.0, 0.0;
    CHECK(see_jacobian(far, d, 0.5, k).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jacobian scales as 1/h for large h") {
    Dataset d = symmetric_intercept_data(0.0, 25);
    const auto& k = horowitz_kernel();
    Eigen::VectorXd beta(1);
    beta << 0.0;
    const double j1 = see_jacobian(beta, d, 1e5, k)(0, 0);
    const double j2 = see_jacobian(beta, d, 2e5, k)(0, 0);
    CHECK(j1 / j2 == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(j1 == doctest::Approx(k.g_prime(0.0) * std::sqrt(50.0) / 1e5).epsilon(1e-6));
}

TEST_CASE("symmetric intercept-only data solves to the center") {
    Dataset d = symmetric_intercept_data(2.3, 15);
    for (double h : {0.1, 1.0, 10.0}) {
        const SeeFit fit = solve_see(d, h, horowitz_kernel());
        CHECK(fit.beta(0) == doctest::Approx(2.3).epsilon(1e-8));
        CHECK(fit.moment_norm <= 1e-10 * std::sqrt(30.0) * (1.0 + fit.beta.norm()));
        CHECK(fit.residuals.size() == 30);
    }
}

TEST_CASE("huge bandwidth reproduces the IV estimate plus the intercept drift") {
    Rng rng(7);
    Dataset d = linear_exogenous(rng, 60, 1.0, 1.0);
    const double h = 5e6;

    const Eigen::VectorXd iv = iv_estimate(d);

    SUBCASE("q = 0.5: the drift vanishes") {
        const SeeFit fit = solve_see(d, h, horowitz_kernel());
        CHECK((fit.beta - iv).norm() / iv.norm() < 1e-6);
    }
    SUBCASE("uniform kernel: drift (h/G'(0))(q-1/2) is exact at any q") {
        for (double q : {0.25, 0.75}) {
            d.q = q;
            const SeeFit fit = solve_see(d, h, uniform_kernel());
            Eigen::VectorXd expect = iv;
            expect(0) += h / 0.5 * (q - 0.5);
            CHECK((fit.beta - expect).norm() / expect.norm() < 1e-6);
        }
    }
}

TEST_CASE("uniform-kernel median fit equals the winsorized-mean root") {
    Rng rng(12);
    Dataset d;
    const int n = 41;
    d.y.resize(n);
    for (int i = 0; i < n; ++i) d.y(i) = 3.0 + 2.0 * rng.student_t(3.0);
    d.x = Eigen::MatrixXd::Ones(n, 1);
    d.z = d.x;
    d.q = 0.5;
    const double h = 0.7;

    const SeeFit fit = solve_see(d, h, uniform_kernel());

    // bisection on sum H((b - y_i)/h), H = 2G - 1, as an independent oracle
    const auto wins = [&](double b) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            const double u = (b - d.y(i)) / h;
            s += u >= 1.0 ? 1.0 : (u <= -1.0 ? -1.0 : u);
        }
        return s;
    };
    double lo = d.y.minCoeff() - h, hi = d.y.maxCoeff() + h;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (wins(mid) < 0.0 ? lo : hi) = mid;
    }
    CHECK(fit.beta(0) == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-9));
}

TEST_CASE("iv estimate: OLS, interpolation, and 2SLS") {
    Rng rng(44);

    SUBCASE("z = x gives OLS") {
        Dataset d = linear_exogenous(rng, 45, 0.5, -0.3);
        const Eigen::VectorXd ols = d.x.colPivHouseholderQr().solve(d.y);
        CHECK((iv_estimate(d) - ols).cwiseAbs().maxCoeff() < 1e-10);
    }

    SUBCASE("noiseless exactly identified data is interpolated") {
        Dataset d;
        const int n = 30;
        d.x.resize(n, 2);
        d.z.resize(n, 2);
        d.y.resize(n);
        for (int i = 0; i < n; ++i) {
            d.x(i, 0) = 1.0;
            d.x(i, 1) = rng.uniform(0.0, 4.0);
            d.z(i, 0) = 1.0;
            d.z(i, 1) = d.x(i, 1) + 0.5 * rng.normal();
            d.y(i) = 2.0 - 1.5 * d.x(i, 1);
        }
        const Eigen::VectorXd b = iv_estimate(d);
        CHECK(b(0) == doctest::Approx(2.0).epsilon(1e-9));
        CHECK(b(1) == doctest::Approx(-1.5).epsilon(1e-9));
    }

    SUBCASE("over-identified equals textbook 2SLS") {
        const int n = 200;
        Dataset d;
        d.x.resize(n, 2);
        d.z.resize(n, 4);
        d.y.resize(n);
        for (int i = 0; i < n; ++i) {
            const double z1 = rng.normal(), z2 = rng.normal(), z3 = rng.uniform(-1.0, 1.0);
            const double v = rng.normal();
            const double xe = 0.5 * z1 - 0.3 * z2 + 0.4 * z3 + v;
            d.x(i, 0) = 1.0;
            d.x(i, 1) = xe;
            d.z(i, 0) = 1.0;
            d.z(i, 1) = z1;
            d.z(i, 2) = z2;
            d.z(i, 3) = z3;
            d.y(i) = 1.0 + 2.0 * xe + 0.8 * v + 0.5 * rng.normal();
        }
        // first stage by normal equations, second stage OLS on fitted x
        const Eigen::MatrixXd pi = (d.z.transpose() * d.z).ldlt().solve(d.z.transpose() * d.x);
        const Eigen::MatrixXd xhat = d.z * pi;
        const Eigen::VectorXd tsls = xhat.colPivHouseholderQr().solve(d.y);
        CHECK((iv_estimate(d) - tsls).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("scf estimator: symmetry, solver contract, endogeneity guard") {
    Dataset d = symmetric_intercept_data(1.2, 18);
    const auto& k = horowitz_kernel();

    const Eigen::VectorXd scf = scf_estimate(d, 0.5, 0.8, k);
    const SeeFit see = solve_see(d, 0.8, k);
    CHECK(std::abs(scf(0) - see.beta(0)) < 1e-8);

    Rng rng(3);
    Dataset lin = linear_exogenous(rng, 50, 1.0, 1.0);
    lin.q = 0.25;
    const Eigen::VectorXd b = scf_estimate(lin, 0.25, 0.6, k);
    Eigen::VectorXd foc = Eigen::VectorXd::Zero(2);
    for (int i = 0; i < 50; ++i) {
        const double v = (lin.x.row(i).dot(b) - lin.y(i)) / 0.6;
        foc += lin.x.row(i).transpose() * (k.g(v) - 0.25 + v * k.g_prime(v));
    }
    foc /= 50.0;
    CHECK(foc.norm() < 1e-8);

    Dataset endo = lin;
    endo.z.col(1) = endo.z.col(1) * 0.9;
    CHECK_THROWS_AS(scf_estimate(endo, 0.25, 0.6, k), EndogenousNotSupported);
}

TEST_CASE("equivariance under column rescaling and y-translation") {
    Rng rng(21);
    const int n = 80;
    Dataset d;
    d.x.resize(n, 3);
    d.y.resize(n);
    for (int i = 0; i < n; ++i) {
        d.x(i, 0) = 1.0;
        d.x(i, 1) = rng.uniform(0.0, 2.0);
        d.x(i, 2) = rng.normal();
        d.y(i) = 0.5 + d.x(i, 1) - 0.7 * d.x(i, 2) + rng.student_t(4.0);
    }
    d.z = d.x;
    d.q = 0.3;
    const double h = 0.8;
    const SeeFit base = solve_see(d, h, horowitz_kernel());

    SUBCASE("diagonal rescaling of regressors inverts the slopes") {
        Dataset s = d;
        s.x.col(1) *= 2.0;
        s.x.col(2) *= 0.5;
        s.z = s.x;
        const SeeFit fit = solve_see(s, h, horowitz_kernel());
        CHECK(fit.beta(0) == doctest::Approx(base.beta(0)).epsilon(1e-8));
        CHECK(fit.beta(1) == doctest::Approx(base.beta(1) / 2.0).epsilon(1e-8));
        CHECK(fit.beta(2) == doctest::Approx(base.beta(2) / 0.5).epsilon(1e-8));
    }

    SUBCASE("adding a constant to y shifts only the intercept") {
        Dataset s = d;
        s.y.array() += 3.7;
        const SeeFit fit = solve_see(s, h, horowitz_kernel());
        CHECK(fit.beta(0) == doctest::Approx(base.beta(0) + 3.7).epsilon(1e-8));
        CHECK(fit.beta(1) == doctest::Approx(base.beta(1)).epsilon(1e-8));
        CHECK(fit.beta(2) == doctest::Approx(base.beta(2)).epsilon(1e-8));
    }
}

TEST_CASE("in-sample smoothed mass matches q at the solution") {
    Rng rng(31);
    Dataset d = linear_exogenous(rng, 70, 1.0, 1.0);
    for (double q : {0.25, 0.5, 0.75}) {
        d.q = q;
        const SeeFit fit = solve_see(d, 0.9, horowitz_kernel());
        double mass = 0.0;
        for (int i = 0; i < 70; ++i)
            mass += horowitz_kernel().g((d.x.row(i).dot(fit.beta) - d.y(i)) / 0.9);
        mass /= 70.0;
        CHECK(std::abs(mass - q) <= 1e-10 * (1.0 + fit.beta.norm()));
    }
}

TEST_CASE("tiny bandwidth is rescued by continuation") {
    Rng rng(60);
    Dataset d;
    const int n = 21;
    d.y.resize(n);
    for (int i = 0; i < n; ++i) d.y(i) = rng.uniform(0.0, 20.0);
    d.x = Eigen::MatrixXd::Ones(n, 1);
    d.z = d.x;
    d.q = 0.3;  // 0.3n is fractional, so the root is pinned inside one kernel window
    const double h = 1e-4;
    Eigen::VectorXd mean_init(1);
    mean_init << d.y.mean();

    const SeeFit fit = solve_see(d, h, horowitz_kernel(), mean_init);
    CHECK(fit.moment_norm <= 1e-10 * std::sqrt(21.0) * (1.0 + fit.beta.norm()));
    CHECK(!fit.path.empty());

    // the root sits within h of the ceil(qn)-th order statistic
    std::vector<double> ys(d.y.data(), d.y.data() + n);
    std::sort(ys.begin(), ys.end());
    CHECK(std::abs(fit.beta(0) - ys[6]) <= h);

    SolverOptions no_rescue;
    no_rescue.continuation = false;
    CHECK_THROWS_AS(solve_see(d, h, horowitz_kernel(), mean_init, no_rescue), SolverError);
}

TEST_CASE("solver is deterministic") {
    Rng rng(88);
    Dataset d = linear_exogenous(rng, 55, 1.0, 1.0);
    d.q = 0.4;
    const SeeFit a = solve_see(d, 0.33, horowitz_kernel());
    const SeeFit b = solve_see(d, 0.33, horowitz_kernel());
    REQUIRE(a.beta.size() == b.beta.size());
    for (int i = 0; i < a.beta.size(); ++i) CHECK(a.beta(i) == b.beta(i));
    CHECK(a.moment_norm == b.moment_norm);
    CHECK(a.iterations == b.iterations);
}
