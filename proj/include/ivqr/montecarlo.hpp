#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ivqr/dataset.hpp"
#include "ivqr/kernels.hpp"

namespace ivqr {

// Catalog of simulation designs.  H1x: exogenous location or scale families.
// SCFx: exogenous designs used for the criterion-function comparison.  E4x:
// endogenous triangular designs.  JTPAxs: earnings-scale self-selection
// designs with a randomized binary offer instrument and synthetic covariates.
enum class DgpId { H11, H12, H13, SCF1, SCF2, SCF3, E41, E42, E43, JTPA1s, JTPA2s };

const char* dgp_name(DgpId id);

// Lookup by catalog name ("H11", ..., "JTPA2s").  Throws std::invalid_argument.
DgpId dgp_by_name(std::string_view name);

// A fully specified design: the id fixes the structural equations, n and q the
// scale.  q participates in the design itself where the error is recentered
// (SCFx, E43), so true_beta stays in closed form at every q.
struct DgpSpec {
    DgpId id;
    int n = 0;
    double q = 0.5;
    bool full_scale = false;  // JTPA2s: restore n = 50000 instead of the desk-scale 5000
};

// Documented default sample size and quantile for the id.
DgpSpec make_dgp(DgpId id);

// Closed-form true coefficient vector of the design at dgp.q.
Eigen::VectorXd true_beta(const DgpSpec& dgp);

// One replication drawn from the design.  Pure in (dgp, seed): byte-identical
// output for equal inputs on every platform.
std::pair<Dataset, Eigen::VectorXd> generate(const DgpSpec& dgp, std::uint64_t seed);

// Estimator specs accepted by run_mc and parse_estimator:
//   "see-plugin"  smoothed solve at the plug-in bandwidth
//   "see-h=<v>"   smoothed solve at a fixed bandwidth
//   "tiny-h"      the near-zero-bandwidth continuation reference
//   "scf"         criterion-function comparator at the shared plug-in bandwidth
//   "scf-h=<v>"   criterion-function comparator at a fixed bandwidth
//   "iv"          mean IV (2SLS)
//   "truth"       returns the true coefficient vector (diagnostic)
// Throws std::invalid_argument for an unknown spec, and for scf on a design
// with endogenous regressors.
void validate_estimator_spec(const std::string& spec, DgpId id);

struct McResult {
    std::vector<std::string> estimator_labels;
    // One reps x d matrix per estimator; a failed replication is an all-NaN
    // row, so slot layout is independent of worker scheduling.
    std::vector<Eigen::MatrixXd> draws;
    std::vector<Eigen::VectorXd> mse;          // per estimator, per coefficient
    std::vector<Eigen::VectorXd> robust_mse;
    std::vector<Eigen::VectorXd> median_bias;
    std::vector<int> failures;                 // per estimator
    Eigen::VectorXd truth;
    std::uint64_t master_seed = 0;
    std::string seed_scheme;
};

// Runs `reps` independent replications of the design, each estimator on the
// same data within a replication.  Replication r draws its stream from
// counter_hash(master_seed, r), so results are identical for any parallelism.
// Estimator failures are recorded, not fatal; metrics use surviving draws.
McResult run_mc(const DgpSpec& dgp, const std::vector<std::string>& estimators, int reps,
                std::uint64_t master_seed, int parallelism);

// Linear-interpolation sample quantile (type 7).  Requires a nonempty sample.
double quantile_type7(std::vector<double> values, double p);

// (median - truth)^2 + (IQR/1.349)^2 with type-7 quantiles.  Requires >= 2 draws.
double robust_mse(const std::vector<double>& draws, double truth);

struct PowerCurve {
    std::vector<double> deltas;            // deviation magnitudes, 0 first
    std::vector<std::string> labels;       // statistic modes
    Eigen::MatrixXd rejection;             // deltas.size() x labels.size()
    std::vector<double> critical_values;   // simulated (1-alpha) null quantile per mode
};

// Size-adjusted power: the critical value per mode is the empirical (1-alpha)
// quantile of the null statistic over the replications, so the curve starts at
// alpha exactly.  Each (replication, deviation) pair draws one random unit
// direction u, shared across modes, and tests beta0 = truth - (delta/sqrt(n)) u
// on the same data as the null run.  Modes: "see-plugin", "see-h=<v>", or
// "tiny-h" (indicator-limit statistic).
PowerCurve size_adjusted_power(const DgpSpec& dgp, const std::vector<double>& deviations,
                               int reps, double alpha, std::uint64_t seed,
                               const std::vector<std::string>& modes = {"see-plugin",
                                                                        "tiny-h"});

struct MomentExpansionPoint {
    double h = 0.0;
    Eigen::VectorXd bias_sim;      // simulated mean of the smoothed summand, per component
    Eigen::VectorXd bias_theory;   // leading term (-h)^r/r! moment_r E[f^(r-1)(0|Z) Z]
    double bias_ratio = 0.0;       // projection of bias_sim onto bias_theory
    Eigen::MatrixXd var_sim;
    Eigen::MatrixXd var_theory;    // q(1-q) E(ZZ') - h (1 - int G^2) E[f(0|Z) ZZ']
    double var_slope_ratio = 0.0;  // empirical O(h) variance deficit over its theory value
    double scf_to_see_ratio = 0.0; // projection of the criterion-function bias onto bias_sim
};

struct MomentExpansionReport {
    std::vector<MomentExpansionPoint> points;
    int draws = 0;
};

// Compares simulated first and second moments of the smoothed summand against
// their leading-term expansions, with the theory side computed by quadrature
// from the known conditional error density.  Supported designs: SCF1, SCF2,
// SCF3, H13 (normal conditional errors); throws std::invalid_argument else.
// The regressor is drawn stratified on its rank and the error coordinate is
// integrated out exactly given each draw (conditional Monte Carlo), so the
// simulated bias is resolvable far below naive Monte Carlo noise.
MomentExpansionReport validate_moment_expansion(const DgpSpec& dgp,
                                                const std::vector<double>& h_grid, int reps);

}  // namespace ivqr
