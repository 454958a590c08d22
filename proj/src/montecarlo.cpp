#include "ivqr/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <thread>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "ivqr/bandwidth.hpp"
#include "ivqr/estimator.hpp"
#include "ivqr/inference.hpp"
#include "ivqr/instruments.hpp"
#include "ivqr/rng.hpp"

namespace ivqr {

namespace {

constexpr double kPi = 3.1415926535897932384626433832795;

double normal_quantile(double p) {
    static const boost::math::normal_distribution<double> dist;
    return boost::math::quantile(dist, std::min(std::max(p, 1e-15), 1.0 - 1e-15));
}

double t3_quantile(double p) {
    static const boost::math::students_t_distribution<double> dist(3.0);
    return boost::math::quantile(dist, std::min(std::max(p, 1e-15), 1.0 - 1e-15));
}

// Extreme-value error of H12: standardized to median zero, variance two.
constexpr double kGumbelScale = 1.1026577908435840990148753014;  // sqrt(12)/pi
const double kGumbelMedian = -std::log(std::log(2.0));

double gumbel_quantile(double p) { return -std::log(-std::log(p)); }

// JTPA-style earnings error: gamma(2, 5000) quantile recentered at its median.
constexpr double kJtpaGammaShape = 2.0;
constexpr double kJtpaGammaScale = 5000.0;

double jtpa_error_quantile(double p) {
    const double u = std::min(std::max(p, 1e-15), 1.0 - 1e-15);
    return kJtpaGammaScale * boost::math::gamma_p_inv(kJtpaGammaShape, u);
}

// Synthetic covariate block shared by the JTPA designs: thirteen independent
// Bernoulli(0.5) dummies with fixed coefficients on the earnings scale.
constexpr int kJtpaDummies = 13;
constexpr double kJtpaIntercept = 10000.0;
constexpr double kJtpaDummyBeta[kJtpaDummies] = {1500.0,  -2500.0, 500.0,  2000.0, -1000.0,
                                                 3000.0,  -500.0,  1000.0, 2500.0, -1500.0,
                                                 500.0,   -2000.0, 1000.0};
constexpr double kJtpaOfferProb = 0.67;
constexpr double kJtpaSelectionCap = 0.75;
constexpr double kJtpaSlopePerRank = 2000.0;  // endogenous coefficient 2000 q at quantile q
constexpr double kJtpaD2Beta = 1000.0;
constexpr double kJtpaNormalBeta = 500.0;
constexpr int kJtpaNormals = 4;

// Endogenous triangular block: d = 1 + pi z + v2, y = slope d + recentred v1,
// with corr(v1, v2) = rho through v2 = sqrt(1-rho^2) t2 + rho t1.
constexpr double kTriRho = 0.5;
constexpr double kTriPi = 0.5;

double e42_slope() { return 1.0 / (kTriRho - std::sqrt(1.0 - kTriRho * kTriRho)); }

bool is_exogenous(DgpId id) {
    switch (id) {
        case DgpId::H11:
        case DgpId::H12:
        case DgpId::H13:
        case DgpId::SCF1:
        case DgpId::SCF2:
        case DgpId::SCF3:
            return true;
        default:
            return false;
    }
}

int effective_n(const DgpSpec& dgp) {
    if (dgp.id == DgpId::JTPA2s && dgp.full_scale) return 50000;
    return dgp.n;
}

}  // namespace

const char* dgp_name(DgpId id) {
    switch (id) {
        case DgpId::H11: return "H11";
        case DgpId::H12: return "H12";
        case DgpId::H13: return "H13";
        case DgpId::SCF1: return "SCF1";
        case DgpId::SCF2: return "SCF2";
        case DgpId::SCF3: return "SCF3";
        case DgpId::E41: return "E41";
        case DgpId::E42: return "E42";
        case DgpId::E43: return "E43";
        case DgpId::JTPA1s: return "JTPA1s";
        case DgpId::JTPA2s: return "JTPA2s";
    }
    throw std::invalid_argument("dgp_name: unknown id");
}

DgpId dgp_by_name(std::string_view name) {
    static const DgpId all[] = {DgpId::H11,  DgpId::H12,  DgpId::H13,  DgpId::SCF1,
                                DgpId::SCF2, DgpId::SCF3, DgpId::E41,  DgpId::E42,
                                DgpId::E43,  DgpId::JTPA1s, DgpId::JTPA2s};
    for (DgpId id : all)
        if (name == dgp_name(id)) return id;
    throw std::invalid_argument("dgp_by_name: unknown design '" + std::string(name) + "'");
}

DgpSpec make_dgp(DgpId id) {
    DgpSpec spec;
    spec.id = id;
    switch (id) {
        case DgpId::H11:
        case DgpId::H12:
        case DgpId::H13:
        case DgpId::SCF1:
            spec.n = 50;
            spec.q = 0.5;
            break;
        case DgpId::SCF2:
            spec.n = 50;
            spec.q = 0.25;
            break;
        case DgpId::SCF3:
            spec.n = 50;
            spec.q = 0.75;
            break;
        case DgpId::E41:
            spec.n = 20;
            spec.q = 0.5;
            break;
        case DgpId::E42:
            spec.n = 250;
            spec.q = 0.5;
            break;
        case DgpId::E43:
            spec.n = 30;
            spec.q = 0.35;
            break;
        case DgpId::JTPA1s:
            spec.n = 5102;
            spec.q = 0.5;
            break;
        case DgpId::JTPA2s:
            spec.n = 5000;
            spec.q = 0.5;
            break;
    }
    return spec;
}

Eigen::VectorXd true_beta(const DgpSpec& dgp) {
    const double q = dgp.q;
    switch (dgp.id) {
        case DgpId::H11: {
            Eigen::VectorXd b(2);
            b << 1.0 + std::sqrt(2.0 / 3.0) * t3_quantile(q), 1.0;
            return b;
        }
        case DgpId::H12: {
            Eigen::VectorXd b(2);
            b << 1.0 + kGumbelScale * (gumbel_quantile(q) - kGumbelMedian), 1.0;
            return b;
        }
        case DgpId::H13: {
            // y = 1 + x + (1+x)V/4: the quantile line tilts through both terms
            const double a = 1.0 + normal_quantile(q) / 4.0;
            Eigen::VectorXd b(2);
            b << a, a;
            return b;
        }
        case DgpId::SCF1:
        case DgpId::SCF2:
        case DgpId::SCF3: {
            // the error sigma(X)(U - Phi^{-1}(q)) has conditional q-quantile zero
            Eigen::VectorXd b(2);
            b << 1.0, 1.0;
            return b;
        }
        case DgpId::E41:
        case DgpId::E43: {
            Eigen::VectorXd b(2);
            b << 0.0, 1.0;
            return b;
        }
        case DgpId::E42: {
            Eigen::VectorXd b(2);
            b << 0.0, e42_slope();
            return b;
        }
        case DgpId::JTPA1s: {
            Eigen::VectorXd b(2 + kJtpaDummies);
            b(0) = kJtpaIntercept + jtpa_error_quantile(q) - jtpa_error_quantile(0.5);
            for (int k = 0; k < kJtpaDummies; ++k) b(1 + k) = kJtpaDummyBeta[k];
            b(1 + kJtpaDummies) = kJtpaSlopePerRank * q;
            return b;
        }
        case DgpId::JTPA2s: {
            Eigen::VectorXd b(3 + kJtpaDummies + kJtpaNormals);
            b(0) = kJtpaIntercept + jtpa_error_quantile(q) - jtpa_error_quantile(0.5);
            for (int k = 0; k < kJtpaDummies; ++k) b(1 + k) = kJtpaDummyBeta[k];
            for (int k = 0; k < kJtpaNormals; ++k) b(1 + kJtpaDummies + k) = kJtpaNormalBeta;
            b(1 + kJtpaDummies + kJtpaNormals) = kJtpaSlopePerRank * q;
            b(2 + kJtpaDummies + kJtpaNormals) = kJtpaD2Beta;
            return b;
        }
    }
    throw std::invalid_argument("true_beta: unknown id");
}

std::pair<Dataset, Eigen::VectorXd> generate(const DgpSpec& dgp, std::uint64_t seed) {
    const int n = effective_n(dgp);
    if (n < 2) throw std::invalid_argument("generate: sample size must be at least 2");
    Rng rng(seed);
    Dataset data;
    data.q = dgp.q;
    data.y.resize(n);

    switch (dgp.id) {
        case DgpId::H11:
        case DgpId::H12:
        case DgpId::H13: {
            data.x.resize(n, 2);
            for (int i = 0; i < n; ++i) {
                const double x = rng.uniform(1.0, 5.0);
                double u = 0.0;
                if (dgp.id == DgpId::H11) {
                    u = rng.student_t(3.0) * std::sqrt(2.0 / 3.0);
                } else if (dgp.id == DgpId::H12) {
                    u = kGumbelScale * (rng.gumbel() - kGumbelMedian);
                } else {
                    u = (1.0 + x) * rng.normal() / 4.0;
                }
                data.x(i, 0) = 1.0;
                data.x(i, 1) = x;
                data.y(i) = 1.0 + x + u;
            }
            data.z = data.x;
            break;
        }
        case DgpId::SCF1:
        case DgpId::SCF2:
        case DgpId::SCF3: {
            const double c = normal_quantile(dgp.q);
            data.x.resize(n, 2);
            for (int i = 0; i < n; ++i) {
                const double x = rng.uniform(1.0, 5.0);
                const double u = rng.normal();
                const double sigma = (dgp.id == DgpId::SCF1) ? 5.0 : 1.0 + x;
                data.x(i, 0) = 1.0;
                data.x(i, 1) = x;
                data.y(i) = 1.0 + x + sigma * (u - c);
            }
            data.z = data.x;
            break;
        }
        case DgpId::E41:
        case DgpId::E42:
        case DgpId::E43: {
            const bool cauchy = dgp.id == DgpId::E42;
            const double slope = cauchy ? e42_slope() : 1.0;
            const double recenter =
                cauchy ? std::tan(kPi * (dgp.q - 0.5)) : normal_quantile(dgp.q);
            data.x.resize(n, 2);
            data.z.resize(n, 2);
            for (int i = 0; i < n; ++i) {
                const double z = rng.normal();
                const double t1 = cauchy ? rng.cauchy() : rng.normal();
                const double t2 = cauchy ? rng.cauchy() : rng.normal();
                const double v1 = t1;
                const double v2 = std::sqrt(1.0 - kTriRho * kTriRho) * t2 + kTriRho * t1;
                const double d = 1.0 + kTriPi * z + v2;
                data.x(i, 0) = 1.0;
                data.x(i, 1) = d;
                data.z(i, 0) = 1.0;
                data.z(i, 1) = z;
                data.y(i) = slope * d + (v1 - recenter);
            }
            break;
        }
        case DgpId::JTPA1s: {
            const double shift = jtpa_error_quantile(0.5);
            const int d = 2 + kJtpaDummies;
            data.x.resize(n, d);
            data.z.resize(n, d);
            for (int i = 0; i < n; ++i) {
                data.x(i, 0) = 1.0;
                data.z(i, 0) = 1.0;
                double xb = kJtpaIntercept;
                for (int k = 0; k < kJtpaDummies; ++k) {
                    const double dum = rng.bernoulli(0.5) ? 1.0 : 0.0;
                    data.x(i, 1 + k) = dum;
                    data.z(i, 1 + k) = dum;
                    xb += kJtpaDummyBeta[k] * dum;
                }
                const double offer = rng.bernoulli(kJtpaOfferProb) ? 1.0 : 0.0;
                const double u = rng.uniform01();
                const double sel = rng.uniform01();
                const double take =
                    (offer > 0.5 && sel < std::min(1.0, u / kJtpaSelectionCap)) ? 1.0 : 0.0;
                data.x(i, 1 + kJtpaDummies) = take;
                data.z(i, 1 + kJtpaDummies) = offer;
                data.y(i) = xb + take * kJtpaSlopePerRank * u + jtpa_error_quantile(u) - shift;
            }
            break;
        }
        case DgpId::JTPA2s: {
            const double shift = jtpa_error_quantile(0.5);
            const int d = 3 + kJtpaDummies + kJtpaNormals;
            data.x.resize(n, d);
            data.z.resize(n, d);
            for (int i = 0; i < n; ++i) {
                data.x(i, 0) = 1.0;
                data.z(i, 0) = 1.0;
                double xb = kJtpaIntercept;
                for (int k = 0; k < kJtpaDummies; ++k) {
                    const double dum = rng.bernoulli(0.5) ? 1.0 : 0.0;
                    data.x(i, 1 + k) = dum;
                    data.z(i, 1 + k) = dum;
                    xb += kJtpaDummyBeta[k] * dum;
                }
                for (int k = 0; k < kJtpaNormals; ++k) {
                    const double w = rng.normal();
                    data.x(i, 1 + kJtpaDummies + k) = w;
                    data.z(i, 1 + kJtpaDummies + k) = w;
                    xb += kJtpaNormalBeta * w;
                }
                const double offer = rng.bernoulli(kJtpaOfferProb) ? 1.0 : 0.0;
                const double z2 = rng.normal();
                const double u = rng.uniform01();
                const double sel = rng.uniform01();
                const double take =
                    (offer > 0.5 && sel < std::min(1.0, u / kJtpaSelectionCap)) ? 1.0 : 0.0;
                const double d2 = 0.8 * z2 + 0.2 * normal_quantile(u);
                data.x(i, 1 + kJtpaDummies + kJtpaNormals) = take;
                data.x(i, 2 + kJtpaDummies + kJtpaNormals) = d2;
                data.z(i, 1 + kJtpaDummies + kJtpaNormals) = offer;
                data.z(i, 2 + kJtpaDummies + kJtpaNormals) = z2;
                data.y(i) = xb + take * kJtpaSlopePerRank * u + kJtpaD2Beta * d2 +
                            jtpa_error_quantile(u) - shift;
            }
            break;
        }
    }
    return {std::move(data), true_beta(dgp)};
}

namespace {

struct ParsedEstimator {
    enum class Kind { see_plugin, see_fixed, tiny_h, scf_plugin, scf_fixed, iv, truth };
    Kind kind = Kind::see_plugin;
    double h = 0.0;
    std::string label;
};

ParsedEstimator parse_estimator(const std::string& spec) {
    ParsedEstimator p;
    p.label = spec;
    auto fixed_value = [&spec](std::string_view prefix) {
        const std::string tail = spec.substr(prefix.size());
        std::size_t used = 0;
        const double v = std::stod(tail, &used);
        if (used != tail.size() || !(v > 0.0))
            throw std::invalid_argument("estimator spec '" + spec +
                                        "': bandwidth must be a positive number");
        return v;
    };
    if (spec == "see-plugin") {
        p.kind = ParsedEstimator::Kind::see_plugin;
    } else if (spec.rfind("see-h=", 0) == 0) {
        p.kind = ParsedEstimator::Kind::see_fixed;
        p.h = fixed_value("see-h=");
    } else if (spec == "tiny-h") {
        p.kind = ParsedEstimator::Kind::tiny_h;
    } else if (spec == "scf") {
        p.kind = ParsedEstimator::Kind::scf_plugin;
    } else if (spec.rfind("scf-h=", 0) == 0) {
        p.kind = ParsedEstimator::Kind::scf_fixed;
        p.h = fixed_value("scf-h=");
    } else if (spec == "iv") {
        p.kind = ParsedEstimator::Kind::iv;
    } else if (spec == "truth") {
        p.kind = ParsedEstimator::Kind::truth;
    } else {
        throw std::invalid_argument("unknown estimator spec '" + spec + "'");
    }
    return p;
}

}  // namespace

void validate_estimator_spec(const std::string& spec, DgpId id) {
    const ParsedEstimator p = parse_estimator(spec);
    const bool scf = p.kind == ParsedEstimator::Kind::scf_plugin ||
                     p.kind == ParsedEstimator::Kind::scf_fixed;
    if (scf && !is_exogenous(id))
        throw std::invalid_argument("estimator spec '" + spec +
                                    "' requires an exogenous design");
}

double quantile_type7(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("quantile_type7: empty sample");
    std::sort(values.begin(), values.end());
    const double pos = (static_cast<double>(values.size()) - 1.0) * std::min(std::max(p, 0.0), 1.0);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

double robust_mse(const std::vector<double>& draws, double truth) {
    if (draws.size() < 2) throw std::invalid_argument("robust_mse: need at least 2 draws");
    const double med = quantile_type7(draws, 0.5);
    const double iqr = quantile_type7(draws, 0.75) - quantile_type7(draws, 0.25);
    const double bias = med - truth;
    const double spread = iqr / 1.349;
    return bias * bias + spread * spread;
}

McResult run_mc(const DgpSpec& dgp, const std::vector<std::string>& estimators, int reps,
                std::uint64_t master_seed, int parallelism) {
    if (reps < 1) throw std::invalid_argument("run_mc: reps must be at least 1");
    if (estimators.empty()) throw std::invalid_argument("run_mc: no estimators given");
    std::vector<ParsedEstimator> parsed;
    for (const auto& spec : estimators) {
        validate_estimator_spec(spec, dgp.id);
        parsed.push_back(parse_estimator(spec));
    }

    McResult result;
    result.estimator_labels = estimators;
    result.truth = true_beta(dgp);
    result.master_seed = master_seed;
    result.seed_scheme = "counter_hash/xoshiro256++";
    const int d = static_cast<int>(result.truth.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    result.draws.assign(estimators.size(), Eigen::MatrixXd::Constant(reps, d, nan));

    const SmoothingKernel& kernel = horowitz_kernel();
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= reps) return;
            auto [data, truth] = generate(dgp, counter_hash(master_seed, r));
            std::optional<double> plugin_h;
            auto shared_plugin = [&]() {
                if (!plugin_h) plugin_h = plugin_bandwidth(data, dgp.q, kernel).selected;
                return *plugin_h;
            };
            for (std::size_t e = 0; e < parsed.size(); ++e) {
                try {
                    Eigen::VectorXd b;
                    switch (parsed[e].kind) {
                        case ParsedEstimator::Kind::see_plugin:
                            b = solve_see(data, shared_plugin(), kernel).beta;
                            break;
                        case ParsedEstimator::Kind::see_fixed:
                            b = solve_see(data, parsed[e].h, kernel).beta;
                            break;
                        case ParsedEstimator::Kind::tiny_h:
                            b = unsmoothed_qr_reference(data, dgp.q);
                            break;
                        case ParsedEstimator::Kind::scf_plugin:
                            b = scf_estimate(data, dgp.q, shared_plugin(), kernel);
                            break;
                        case ParsedEstimator::Kind::scf_fixed:
                            b = scf_estimate(data, dgp.q, parsed[e].h, kernel);
                            break;
                        case ParsedEstimator::Kind::iv:
                            b = iv_estimate(data);
                            break;
                        case ParsedEstimator::Kind::truth:
                            b = truth;
                            break;
                    }
                    if (b.size() == d && b.allFinite()) result.draws[e].row(r) = b.transpose();
                } catch (const std::exception&) {
                    // failure stays recorded as the NaN slot
                }
            }
        }
    };

    const int workers = std::max(1, std::min(parallelism, reps));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    result.mse.assign(estimators.size(), Eigen::VectorXd::Constant(d, nan));
    result.robust_mse.assign(estimators.size(), Eigen::VectorXd::Constant(d, nan));
    result.median_bias.assign(estimators.size(), Eigen::VectorXd::Constant(d, nan));
    result.failures.assign(estimators.size(), 0);
    for (std::size_t e = 0; e < parsed.size(); ++e) {
        std::vector<int> ok;
        for (int r = 0; r < reps; ++r)
            if (result.draws[e].row(r).allFinite()) ok.push_back(r);
        result.failures[e] = reps - static_cast<int>(ok.size());
        if (ok.size() < 2) continue;
        for (int k = 0; k < d; ++k) {
            std::vector<double> col;
            col.reserve(ok.size());
            double sq = 0.0;
            for (int r : ok) {
                const double v = result.draws[e](r, k);
                col.push_back(v);
                const double err = v - result.truth(k);
                sq += err * err;
            }
            result.mse[e](k) = sq / static_cast<double>(ok.size());
            result.median_bias[e](k) = quantile_type7(col, 0.5) - result.truth(k);
            result.robust_mse[e](k) = robust_mse(col, result.truth(k));
        }
    }
    return result;
}

namespace {

// h -> 0 limit of the score statistic: the indicator replaces the smooth CDF.
double s_statistic_indicator(const Eigen::VectorXd& beta0, const Dataset& data) {
    const Eigen::MatrixXd zt = project_instruments(data.x, data.z);
    const Eigen::Index n = data.n();
    Eigen::VectorXd m = Eigen::VectorXd::Zero(zt.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const double u = data.y(i) - data.x.row(i).dot(beta0);
        m += zt.row(i).transpose() * ((u < 0.0 ? 1.0 : 0.0) - data.q);
    }
    m /= std::sqrt(static_cast<double>(n));
    const Eigen::MatrixXd v = v_hat(data);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw std::runtime_error("instrument second moment is not positive definite");
    return std::max(0.0, m.dot(ldlt.solve(m)));
}

struct PowerMode {
    enum class Kind { see_plugin, see_fixed, tiny_h };
    Kind kind = Kind::see_plugin;
    double h = 0.0;
};

PowerMode parse_power_mode(const std::string& spec) {
    const ParsedEstimator p = parse_estimator(spec);
    PowerMode mode;
    switch (p.kind) {
        case ParsedEstimator::Kind::see_plugin:
            mode.kind = PowerMode::Kind::see_plugin;
            return mode;
        case ParsedEstimator::Kind::see_fixed:
            mode.kind = PowerMode::Kind::see_fixed;
            mode.h = p.h;
            return mode;
        case ParsedEstimator::Kind::tiny_h:
            mode.kind = PowerMode::Kind::tiny_h;
            return mode;
        default:
            throw std::invalid_argument("size_adjusted_power: mode '" + spec +
                                        "' is not a statistic mode");
    }
}

}  // namespace

PowerCurve size_adjusted_power(const DgpSpec& dgp, const std::vector<double>& deviations,
                               int reps, double alpha, std::uint64_t seed,
                               const std::vector<std::string>& modes) {
    if (reps < 200) throw std::invalid_argument("size_adjusted_power: need reps >= 200");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("size_adjusted_power: alpha must lie in (0,1)");
    if (modes.empty()) throw std::invalid_argument("size_adjusted_power: no modes given");
    std::vector<PowerMode> parsed;
    for (const auto& m : modes) parsed.push_back(parse_power_mode(m));

    std::vector<double> deltas;
    deltas.push_back(0.0);
    for (double d : deviations) {
        if (d < 0.0) throw std::invalid_argument("size_adjusted_power: negative deviation");
        if (d > 0.0) deltas.push_back(d);
    }

    const SmoothingKernel& kernel = horowitz_kernel();
    const std::size_t n_modes = parsed.size();
    const std::size_t n_deltas = deltas.size();
    const Eigen::VectorXd truth = true_beta(dgp);
    const int d = static_cast<int>(truth.size());
    const double root_n = std::sqrt(static_cast<double>(effective_n(dgp)));

    // statistics[j][m][r]; row 0 is the null
    std::vector<std::vector<std::vector<double>>> stats(
        n_deltas, std::vector<std::vector<double>>(n_modes, std::vector<double>(reps, 0.0)));

    for (int r = 0; r < reps; ++r) {
        auto [data, tb] = generate(dgp, counter_hash(seed, r));
        std::optional<double> plugin_h;
        auto mode_stat = [&](const PowerMode& mode, const Eigen::VectorXd& beta0) {
            switch (mode.kind) {
                case PowerMode::Kind::see_plugin:
                    if (!plugin_h) plugin_h = plugin_bandwidth(data, dgp.q, kernel).selected;
                    return s_statistic(beta0, data, *plugin_h, kernel);
                case PowerMode::Kind::see_fixed:
                    return s_statistic(beta0, data, mode.h, kernel);
                case PowerMode::Kind::tiny_h:
                    return s_statistic_indicator(beta0, data);
            }
            throw std::logic_error("unreachable");
        };
        for (std::size_t m = 0; m < n_modes; ++m) stats[0][m][r] = mode_stat(parsed[m], truth);
        for (std::size_t j = 1; j < n_deltas; ++j) {
            Rng dir_rng(counter_hash(counter_hash(seed, r), 1000 + j));
            Eigen::VectorXd u(d);
            for (int k = 0; k < d; ++k) u(k) = dir_rng.normal();
            u /= u.norm();
            const Eigen::VectorXd beta0 = truth - (deltas[j] / root_n) * u;
            for (std::size_t m = 0; m < n_modes; ++m) stats[j][m][r] = mode_stat(parsed[m], beta0);
        }
    }

    PowerCurve curve;
    curve.deltas = deltas;
    curve.labels = modes;
    curve.rejection.resize(static_cast<Eigen::Index>(n_deltas), static_cast<Eigen::Index>(n_modes));
    curve.critical_values.resize(n_modes);
    for (std::size_t m = 0; m < n_modes; ++m) {
        curve.critical_values[m] = quantile_type7(stats[0][m], 1.0 - alpha);
        for (std::size_t j = 0; j < n_deltas; ++j) {
            int rej = 0;
            for (int r = 0; r < reps; ++r)
                if (stats[j][m][r] > curve.critical_values[m]) ++rej;
            curve.rejection(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(m)) =
                static_cast<double>(rej) / static_cast<double>(reps);
        }
    }
    return curve;
}

namespace {

// Conditional error density parameters for the designs with normal errors:
// e | X ~ N(mu(X), s(X)^2).
struct ConditionalNormal {
    double mu = 0.0;
    double s = 1.0;
};

ConditionalNormal conditional_error(DgpId id, double q, double x) {
    const double c = normal_quantile(q);
    switch (id) {
        case DgpId::SCF1: return {-5.0 * c, 5.0};
        case DgpId::SCF2:
        case DgpId::SCF3: return {-(1.0 + x) * c, 1.0 + x};
        case DgpId::H13: return {0.0, (1.0 + x) / 4.0};
        default:
            throw std::invalid_argument(
                "validate_moment_expansion: conditional density known only for "
                "SCF1, SCF2, SCF3, H13");
    }
}

double normal_pdf_deriv(double x, int order) {
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
    switch (order) {
        case 0: return phi;
        case 1: return -x * phi;
        case 2: return (x * x - 1.0) * phi;
        case 3: return (3.0 * x - x * x * x) * phi;
        default: throw std::invalid_argument("normal_pdf_deriv: order above 3");
    }
}

// f^(k)(0 | X) for the conditional error density.
double conditional_density_deriv(const ConditionalNormal& cn, int order) {
    const double z0 = -cn.mu / cn.s;
    return normal_pdf_deriv(z0, order) / std::pow(cn.s, order + 1);
}

}  // namespace

MomentExpansionReport validate_moment_expansion(const DgpSpec& dgp,
                                                const std::vector<double>& h_grid, int reps) {
    if (reps < 1000) throw std::invalid_argument("validate_moment_expansion: need reps >= 1000");
    if (h_grid.empty()) throw std::invalid_argument("validate_moment_expansion: empty h grid");
    conditional_error(dgp.id, dgp.q, 1.0);  // rejects unsupported designs up front

    const SmoothingKernel& kernel = horowitz_kernel();
    const KernelConstants kc = kernel_constants(kernel);
    const int r = kernel.r;
    const double q = dgp.q;

    // Theory side by quadrature over X ~ Unif(1,5), Z = (1, X).
    auto x_average = [&](auto&& f) {
        return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
                   f, 1.0, 5.0, 10, 1e-12) /
               4.0;
    };
    Eigen::VectorXd ez_frm1(2);  // E[f^(r-1)(0|X) Z]
    Eigen::MatrixXd ezz(2, 2), ezz_f0(2, 2);
    {
        auto frm1 = [&](double x) {
            return conditional_density_deriv(conditional_error(dgp.id, q, x), r - 1);
        };
        auto f0 = [&](double x) {
            return conditional_density_deriv(conditional_error(dgp.id, q, x), 0);
        };
        ez_frm1 << x_average(frm1), x_average([&](double x) { return x * frm1(x); });
        ezz << 1.0, x_average([](double x) { return x; }),
            x_average([](double x) { return x; }), x_average([](double x) { return x * x; });
        ezz_f0 << x_average(f0), x_average([&](double x) { return x * f0(x); }),
            x_average([&](double x) { return x * f0(x); }),
            x_average([&](double x) { return x * x * f0(x); });
    }

    double rfact = 1.0;
    for (int k = 2; k <= r; ++k) rfact *= k;
    const double lead = std::pow(-1.0, r) / rfact * kc.moment_r;

    MomentExpansionReport report;
    report.draws = reps;
    for (const double h : h_grid) {
        if (!(h > 0.0)) throw std::invalid_argument("validate_moment_expansion: h must be positive");
        MomentExpansionPoint pt;
        pt.h = h;

        // Conditional Monte Carlo over a rank-stratified regressor: given each
        // X the error coordinate is integrated out exactly on the kernel
        // window (split at v = 0 where the centering indicator jumps), so the
        // only sampling noise left rides on quantities of the bias's own
        // order, not on the O(1) smoothed indicator.
        Rng rng(counter_hash(0x5eedf00dULL ^ static_cast<std::uint64_t>(reps),
                             static_cast<std::uint64_t>(h * 1e6)));
        using GL = boost::math::quadrature::gauss<double, 10>;
        Eigen::VectorXd sum_w = Eigen::VectorXd::Zero(2);
        Eigen::VectorXd sum_scf = Eigen::VectorXd::Zero(2);
        Eigen::MatrixXd sum_ww = Eigen::MatrixXd::Zero(2, 2);
        for (int i = 0; i < reps; ++i) {
            const double x =
                1.0 + 4.0 * (static_cast<double>(i) + rng.uniform01()) / static_cast<double>(reps);
            const ConditionalNormal cn = conditional_error(dgp.id, q, x);
            auto fdens = [&](double v) {
                const double t = (-h * v - cn.mu) / cn.s;
                return std::exp(-0.5 * t * t) / (cn.s * std::sqrt(2.0 * kPi));
            };
            auto split = [](auto&& f) {
                return GL::integrate(f, -1.0, 0.0) + GL::integrate(f, 0.0, 1.0);
            };
            const double bias_x = h * split([&](double v) {
                return (kernel.g(v) - (v > 0.0 ? 1.0 : 0.0)) * fdens(v);
            });
            const double m2_x = q * (1.0 - q) + h * split([&](double v) {
                const double a = kernel.g(v) - q;
                const double b = (v > 0.0 ? 1.0 : 0.0) - q;
                return (a * a - b * b) * fdens(v);
            });
            const double scf_x =
                h * split([&](double v) { return v * kernel.g_prime(v) * fdens(v); });
            Eigen::Vector2d z(1.0, x);
            sum_w += z * bias_x;
            sum_ww += z * z.transpose() * m2_x;
            sum_scf += z * scf_x;
        }
        const double dn = static_cast<double>(reps);
        pt.bias_sim = sum_w / dn;
        pt.var_sim = sum_ww / dn - (sum_w / dn) * (sum_w / dn).transpose();
        pt.bias_theory = lead * std::pow(h, r) * ez_frm1;
        pt.var_theory = q * (1.0 - q) * ezz - h * kc.one_minus_g_sq * ezz_f0;
        pt.bias_ratio = pt.bias_sim.dot(pt.bias_theory) / pt.bias_theory.squaredNorm();
        const Eigen::MatrixXd deficit = (q * (1.0 - q) * ezz - pt.var_sim) / h;
        const Eigen::MatrixXd slope = kc.one_minus_g_sq * ezz_f0;
        pt.var_slope_ratio =
            (deficit.array() * slope.array()).sum() / slope.array().square().sum();
        const Eigen::VectorXd bias_scf = pt.bias_sim + sum_scf / dn;
        pt.scf_to_see_ratio = bias_scf.dot(pt.bias_sim) / pt.bias_sim.squaredNorm();
        report.points.push_back(std::move(pt));
    }
    return report;
}

}  // namespace ivqr
