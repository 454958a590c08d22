#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "ivqr/instruments.hpp"
#include "ivqr/rng.hpp"

using namespace ivqr;

namespace {

Eigen::MatrixXd random_design(Rng& rng, int n, int d) {
    Eigen::MatrixXd x(n, d);
    x.col(0).setOnes();
    for (int j = 1; j < d; ++j)
        for (int i = 0; i < n; ++i) x(i, j) = rng.uniform(-2.0, 2.0);
    return x;
}

}  // namespace

TEST_CASE("projection of x on itself is the identity map") {
    Rng rng(101);
    const Eigen::MatrixXd x = random_design(rng, 60, 3);
    const Eigen::MatrixXd zt = project_instruments(x, x);
    CHECK((zt - x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("projection matches the normal-equations oracle") {
    Rng rng(202);
    const int n = 80, d = 3, dz = 5;
    const Eigen::MatrixXd x = random_design(rng, n, d);
    Eigen::MatrixXd z(n, dz);
    z.col(0).setOnes();
    for (int j = 1; j < dz; ++j)
        for (int i = 0; i < n; ++i) z(i, j) = rng.normal();

    const Eigen::MatrixXd zt = project_instruments(x, z);
    REQUIRE(zt.rows() == n);
    REQUIRE(zt.cols() == d);

    // independent solve of the normal equations via LDLT
    const Eigen::MatrixXd beta = (z.transpose() * z).ldlt().solve(z.transpose() * x);
    const Eigen::MatrixXd fitted = z * beta;
    CHECK((zt - fitted).cwiseAbs().maxCoeff() < 1e-8);

    // intercept column reproduces itself when z contains one
    CHECK((zt.col(0) - Eigen::VectorXd::Ones(n)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("projection is invariant to invertible reparameterization of z") {
    Rng rng(303);
    const int n = 70, d = 2, dz = 4;
    const Eigen::MatrixXd x = random_design(rng, n, d);
    Eigen::MatrixXd z(n, dz);
    for (int j = 0; j < dz; ++j)
        for (int i = 0; i < n; ++i) z(i, j) = rng.uniform(0.0, 3.0);

    Eigen::MatrixXd a(dz, dz);
    for (int j = 0; j < dz; ++j)
        for (int i = 0; i < dz; ++i) a(i, j) = rng.normal();
    a += 3.0 * Eigen::MatrixXd::Identity(dz, dz);
    REQUIRE(std::abs(a.determinant()) > 1e-6);

    const Eigen::MatrixXd z1 = project_instruments(x, z);
    const Eigen::MatrixXd z2 = project_instruments(x, z * a);
    CHECK((z1 - z2).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("rank-deficient instruments are rejected") {
    Rng rng(404);
    const int n = 40;
    const Eigen::MatrixXd x = random_design(rng, n, 2);
    Eigen::MatrixXd z(n, 3);
    for (int i = 0; i < n; ++i) {
        z(i, 0) = 1.0;
        z(i, 1) = rng.normal();
        z(i, 2) = 2.0 * z(i, 1);  // exact collinearity
    }
    CHECK_THROWS_AS(project_instruments(x, z), std::runtime_error);
    CHECK_THROWS_AS(project_instruments(x, Eigen::MatrixXd::Ones(n, 1)), std::invalid_argument);
}

TEST_CASE("sieve with degree 1 equals plain projection") {
    Rng rng(505);
    const int n = 50, d = 2;
    const Eigen::MatrixXd x = random_design(rng, n, d);
    Eigen::MatrixXd z(n, 2);
    z.col(0).setOnes();
    for (int i = 0; i < n; ++i) z(i, 1) = rng.uniform(0.5, 4.0);

    const Eigen::MatrixXd a = project_instruments(x, z);
    const Eigen::MatrixXd b = sieve_instruments(x, z, 1);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("sieve residuals are orthogonal to the basis") {
    Rng rng(606);
    const int n = 120, d = 3;
    const Eigen::MatrixXd x = random_design(rng, n, d);
    Eigen::MatrixXd z(n, 2);
    for (int i = 0; i < n; ++i) {
        z(i, 0) = rng.uniform(-1.0, 1.0);
        z(i, 1) = rng.uniform(0.0, 2.0);
    }
    const int degree = 3;
    const Eigen::MatrixXd zt = sieve_instruments(x, z, degree);
    const Eigen::MatrixXd phi = sieve_basis(z, degree);
    const double worst = (phi.transpose() * (x - zt)).cwiseAbs().maxCoeff();
    CHECK(worst < 1e-8 * n);
}

TEST_CASE("degree-2 sieve recovers a quadratic conditional mean") {
    Rng rng(707);
    const int n = 2000;
    Eigen::MatrixXd z(n, 1);
    Eigen::MatrixXd x(n, 2);
    Eigen::VectorXd truth(n);
    const double noise = 0.1;
    for (int i = 0; i < n; ++i) {
        const double zi = rng.uniform(0.0, 2.0);
        z(i, 0) = zi;
        truth(i) = 1.0 + 0.5 * zi + 0.8 * zi * zi;
        x(i, 0) = 1.0;
        x(i, 1) = truth(i) + noise * rng.normal();
    }
    const Eigen::MatrixXd zt = sieve_instruments(x, z, 2);
    const double rmse = std::sqrt((zt.col(1) - truth).squaredNorm() / n);
    // basis nests the truth, so the error is the parametric rate
    CHECK(rmse < 3.0 * noise * std::sqrt(3.0 / n));
    CHECK((zt.col(0) - Eigen::VectorXd::Ones(n)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("sieve deduplicates constant columns and flags collinear bases") {
    Rng rng(808);
    const int n = 30;
    Eigen::MatrixXd z(n, 2);
    z.col(0).setConstant(3.0);  // constant column enters the basis only as the intercept
    for (int i = 0; i < n; ++i) z(i, 1) = rng.normal();
    CHECK(sieve_basis(z, 2).cols() == 3);

    Eigen::MatrixXd zb(n, 1);
    for (int i = 0; i < n; ++i) zb(i, 0) = (i % 2 == 0) ? 0.0 : 1.0;  // binary: z^2 = z
    const Eigen::MatrixXd x = random_design(rng, n, 2);
    CHECK_THROWS_WITH_AS(sieve_instruments(x, zb, 2),
                         doctest::Contains("reduce the sieve degree"), std::runtime_error);
}
