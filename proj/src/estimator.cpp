#include "ivqr/estimator.hpp"

#include <cmath>
#include <limits>

#include "ivqr/instruments.hpp"

namespace ivqr {

namespace {

Eigen::VectorXd moments_core(const Eigen::VectorXd& beta, const Eigen::VectorXd& y,
                             const Eigen::MatrixXd& x, const Eigen::MatrixXd& zt, double q,
                             double h, const SmoothingKernel& kernel) {
    const Eigen::Index n = y.size();
    Eigen::VectorXd m = Eigen::VectorXd::Zero(x.cols());
    for (Eigen::Index j = 0; j < n; ++j) {
        const double v = (x.row(j).dot(beta) - y(j)) / h;
        m.noalias() += zt.row(j).transpose() * (kernel.g(v) - q);
    }
    return m / std::sqrt(static_cast<double>(n));
}

Eigen::MatrixXd jacobian_core(const Eigen::VectorXd& beta, const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& x, const Eigen::MatrixXd& zt, double h,
                              const SmoothingKernel& kernel) {
    const Eigen::Index n = y.size();
    const Eigen::Index d = x.cols();
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double v = (x.row(j).dot(beta) - y(j)) / h;
        const double w = kernel.g_prime(v);
        if (w != 0.0) jac.noalias() += w * (zt.row(j).transpose() * x.row(j));
    }
    return jac / (h * std::sqrt(static_cast<double>(n)));
}

struct CoreResult {
    Eigen::VectorXd beta;
    double moment_norm;
    int iterations;
};

// Index of the residual closest to zero.
Eigen::Index nearest_residual(const Eigen::VectorXd& beta, const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& x) {
    Eigen::Index best = 0;
    double bestabs = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < y.size(); ++j) {
        const double u = x.row(j).dot(beta) - y(j);
        if (std::abs(u) < bestabs) {
            bestabs = std::abs(u);
            best = j;
        }
    }
    return best;
}

// One damped-Newton run at fixed h.  Throws SingularJacobian on a dead
// window it cannot recover from, MaxIterations past the cap.  A stalled
// line search means the iterate slid into a fold of the moment map (a
// local minimum of ‖m‖ with a near-singular Jacobian); the escape probes
// restart Newton along the Jacobian's flattest direction, where the
// neighbouring solution branch lies.
CoreResult newton_core(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                       const Eigen::MatrixXd& zt, double q, double h,
                       const SmoothingKernel& kernel, Eigen::VectorXd beta,
                       const SolverOptions& opts, bool allow_escape = true) {
    const double sqrt_n = std::sqrt(static_cast<double>(y.size()));
    const Eigen::Index d = x.cols();
    Eigen::VectorXd m = moments_core(beta, y, x, zt, q, h, kernel);
    double norm = m.norm();
    bool recentered = false;

    for (int it = 1; it <= opts.max_iter; ++it) {
        if (norm <= opts.tol * sqrt_n * (1.0 + beta.norm()))
            return {beta, norm, it - 1};

        Eigen::MatrixXd jac = jacobian_core(beta, y, x, zt, h, kernel);
        if (jac.cwiseAbs().maxCoeff() == 0.0) {
            // every residual is outside the kernel window; pull the nearest
            // one back to the window center through the intercept
            if (recentered) throw SingularJacobian("solver: no residual in the kernel window");
            recentered = true;
            const Eigen::Index j = nearest_residual(beta, y, x);
            beta(0) -= x.row(j).dot(beta) - y(j);
            m = moments_core(beta, y, x, zt, q, h, kernel);
            norm = m.norm();
            continue;
        }

        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(jac);
        Eigen::VectorXd step;
        if (qr.rank() < d) {
            // minimum-norm least-squares direction through the flat subspace
            Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(jac);
            step = cod.solve(-m);
        } else {
            step = qr.solve(-m);
        }
        if (!step.allFinite()) throw SingularJacobian("solver: non-finite Newton step");

        double lambda = 1.0;
        bool accepted = false;
        for (int half = 0; half <= 30; ++half) {
            const Eigen::VectorXd cand = beta + lambda * step;
            const Eigen::VectorXd mc = moments_core(cand, y, x, zt, q, h, kernel);
            const double nc = mc.norm();
            if (nc < norm) {
                beta = cand;
                m = mc;
                norm = nc;
                accepted = true;
                break;
            }
            lambda *= opts.damping;
        }
        if (!accepted) {
            if (allow_escape) {
                Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac, Eigen::ComputeFullV);
                const Eigen::VectorXd flat = svd.matrixV().col(d - 1);
                for (const double t : {1.0, 2.0, 4.0, 8.0, 16.0}) {
                    for (const double s : {1.0, -1.0}) {
                        try {
                            CoreResult sub = newton_core(y, x, zt, q, h, kernel,
                                                         beta + s * t * h * flat, opts, false);
                            sub.iterations += it;
                            return sub;
                        } catch (const SolverError&) {
                        }
                    }
                }
            }
            throw SingularJacobian("solver: stalled line search");
        }
        recentered = false;
    }
    if (norm <= opts.tol * sqrt_n * (1.0 + beta.norm()))
        return {beta, norm, opts.max_iter};
    throw MaxIterations("solver: no convergence within the iteration cap");
}

Eigen::VectorXd iv_core(const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                        const Eigen::MatrixXd& zt) {
    const Eigen::MatrixXd a = zt.transpose() * x;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (!lu.isInvertible()) throw SolverError("iv_estimate: singular instrument cross-product");
    return lu.solve(zt.transpose() * y);
}

}  // namespace

Eigen::VectorXd see_moments(const Eigen::VectorXd& beta, const Dataset& data, double h,
                            const SmoothingKernel& kernel) {
    if (!(h > 0.0)) throw std::invalid_argument("see_moments: h must be positive");
    const Eigen::MatrixXd zt = project_instruments(data.x, data.z);
    return moments_core(beta, data.y, data.x, zt, data.q, h, kernel);
}

Eigen::MatrixXd see_jacobian(const Eigen::VectorXd& beta, const Dataset& data, double h,
                             const SmoothingKernel& kernel) {
    if (!(h > 0.0)) throw std::invalid_argument("see_jacobian: h must be positive");
    const Eigen::MatrixXd zt = project_instruments(data.x, data.z);
    return jacobian_core(beta, data.y, data.x, zt, h, kernel);
}

SeeFit solve_see(const Dataset& data, double h, const SmoothingKernel& kernel,
                 const std::optional<Eigen::VectorXd>& init, const SolverOptions& opts) {
    if (!(h > 0.0)) throw std::invalid_argument("solve_see: h must be positive");
    const Eigen::MatrixXd zt = project_instruments(data.x, data.z);
    const Eigen::VectorXd beta0 = init ? *init : iv_core(data.y, data.x, zt);

    SeeFit fit;
    fit.h = h;
    fit.kernel = kernel.name;

    try {
        const CoreResult r = newton_core(data.y, data.x, zt, data.q, h, kernel, beta0, opts);
        fit.beta = r.beta;
        fit.moment_norm = r.moment_norm;
        fit.iterations = r.iterations;
    } catch (const SolverError&) {
        if (!opts.continuation) throw;
        // find an h large enough to solve, then ladder back down
        int k = 0;
        std::optional<CoreResult> top;
        for (k = 1; k <= 60; ++k) {
            try {
                top = newton_core(data.y, data.x, zt, data.q, h * std::pow(2.0, k), kernel,
                                  beta0, opts);
                break;
            } catch (const SolverError&) {
            }
        }
        if (!top) throw SingularJacobian("solver: continuation could not find a solvable bandwidth");

        int total_iter = top->iterations;
        double h_cur = h * std::pow(2.0, k);
        Eigen::VectorXd beta = top->beta;
        fit.path.push_back({h_cur, beta});
        while (h_cur > h) {
            double h_next = std::max(h, h_cur * opts.ladder_factor);
            // a stalled rung bisects the step geometrically; a step that can
            // no longer shrink means the solution branch folds here
            std::optional<CoreResult> r;
            while (!r) {
                try {
                    r = newton_core(data.y, data.x, zt, data.q, h_next, kernel, beta, opts);
                } catch (const SolverError&) {
                    if (h_next >= h_cur * (1.0 - 1e-6)) throw;
                    h_next = std::sqrt(h_cur * h_next);
                }
            }
            h_cur = h_next;
            beta = r->beta;
            total_iter += r->iterations;
            fit.path.push_back({h_cur, beta});
        }
        fit.beta = beta;
        fit.moment_norm = moments_core(beta, data.y, data.x, zt, data.q, h, kernel).norm();
        fit.iterations = total_iter;
    }

    fit.residuals = data.y - data.x * fit.beta;
    return fit;
}

Eigen::VectorXd iv_estimate(const Dataset& data) {
    const Eigen::MatrixXd zt = project_instruments(data.x, data.z);
    return iv_core(data.y, data.x, zt);
}

Eigen::VectorXd scf_estimate(const Dataset& data, double q, double h,
                             const SmoothingKernel& kernel) {
    if (!(h > 0.0)) throw std::invalid_argument("scf_estimate: h must be positive");
    if (data.z.rows() != data.x.rows() || data.z.cols() != data.x.cols() ||
        (data.z - data.x).cwiseAbs().maxCoeff() != 0.0)
        throw EndogenousNotSupported("scf_estimate: requires z identical to x");

    const Eigen::VectorXd& y = data.y;
    const Eigen::MatrixXd& x = data.x;
    const Eigen::Index n = y.size();
    const Eigen::Index d = x.cols();

    const auto foc = [&](const Eigen::VectorXd& beta, double hh) {
        Eigen::VectorXd f = Eigen::VectorXd::Zero(d);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double v = (x.row(i).dot(beta) - y(i)) / hh;
            f.noalias() += x.row(i).transpose() * (kernel.g(v) - q + v * kernel.g_prime(v));
        }
        return (f / static_cast<double>(n)).eval();
    };

    // one Newton run at fixed h; returns nullopt on stall.  The tolerance
    // scale is frozen at the starting point: measuring it at the current
    // iterate would let a diverging iterate certify itself once its norm
    // dwarfs the criterion plateau.
    const auto attempt = [&](Eigen::VectorXd beta, double hh) -> std::optional<Eigen::VectorXd> {
        const double scale = 1.0 + beta.norm();
        Eigen::VectorXd f = foc(beta, hh);
        double norm = f.norm();
        bool recentered = false;
        for (int it = 0; it < 100; ++it) {
            if (norm <= 1e-10 * scale) return beta;
            Eigen::MatrixXd jac(d, d);
            for (Eigen::Index c = 0; c < d; ++c) {
                const double eps = 1e-6 * (1.0 + std::abs(beta(c)));
                Eigen::VectorXd bp = beta, bm = beta;
                bp(c) += eps;
                bm(c) -= eps;
                jac.col(c) = (foc(bp, hh) - foc(bm, hh)) / (2.0 * eps);
            }
            if (jac.cwiseAbs().maxCoeff() == 0.0) {
                if (recentered) return std::nullopt;
                recentered = true;
                const Eigen::Index j = nearest_residual(beta, y, x);
                beta(0) -= x.row(j).dot(beta) - y(j);
                f = foc(beta, hh);
                norm = f.norm();
                continue;
            }
            Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(jac);
            const Eigen::VectorXd step = cod.solve(-f);
            if (!step.allFinite()) return std::nullopt;
            double lambda = 1.0;
            bool accepted = false;
            for (int half = 0; half <= 30; ++half) {
                const Eigen::VectorXd cand = beta + lambda * step;
                const Eigen::VectorXd fc = foc(cand, hh);
                if (fc.norm() < norm) {
                    beta = cand;
                    f = fc;
                    norm = fc.norm();
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if (!accepted) return std::nullopt;
            recentered = false;
        }
        return std::nullopt;
    };

    const Eigen::VectorXd beta0 = iv_core(y, x, x);
    if (auto direct = attempt(beta0, h)) return *direct;

    // bandwidth continuation, as for the SEE solver
    std::optional<Eigen::VectorXd> top;
    int k = 0;
    for (k = 1; k <= 60; ++k) {
        top = attempt(beta0, h * std::pow(2.0, k));
        if (top) break;
    }
    if (!top) throw SingularJacobian("scf_estimate: continuation could not find a solvable bandwidth");
    double h_cur = h * std::pow(2.0, k);
    Eigen::VectorXd beta = *top;
    while (h_cur > h) {
        double h_next = std::max(h, h_cur * 0.5);
        std::optional<Eigen::VectorXd> r;
        while (!(r = attempt(beta, h_next))) {
            if (h_next >= h_cur * (1.0 - 1e-6))
                throw SingularJacobian("scf_estimate: stall during continuation descent");
            h_next = std::sqrt(h_cur * h_next);
        }
        h_cur = h_next;
        beta = *r;
    }
    return beta;
}

}  // namespace ivqr
