#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ivqr/bandwidth.hpp"
#include "ivqr/dataset.hpp"
#include "ivqr/estimator.hpp"
#include "ivqr/inference.hpp"
#include "ivqr/montecarlo.hpp"

namespace ivqr {

struct SchemaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Carries the 1-based data row in the message.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RankError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Command { fit, test, bandwidth, simulate, power, power_curve };
enum class HMode { plugin, fixed, tiny, huge };
enum class OutputFormat { json, csv };

struct RunConfig {
    Command command = Command::fit;
    std::optional<std::string> data_path;
    double q = 0.5;
    std::string kernel = "horowitz4";
    HMode h_mode = HMode::plugin;
    double h_fixed = 0.0;             // meaningful only when h_mode == fixed
    double alpha = 0.05;
    std::uint64_t seed = 42;          // fixed default keeps unseeded runs deterministic
    int parallelism = 1;
    std::string output;               // empty: stdout
    std::optional<OutputFormat> format;  // unset: the command's native format

    // q in (0,1), alpha in (0,1), fixed h > 0, parallelism >= 1
    void validate() const;
};

struct SchemaOptions {
    bool add_intercept = false;
    // K >= 1 replaces the instrument columns by their polynomial sieve basis
    // before the dimension check, so d_z < d raw instrument counts can still
    // identify the model.
    int sieve_degree = 0;
    // Requires d_z == d; with exact identification the projected system is an
    // invertible linear transform of the raw one, so estimates, test values,
    // and bandwidths are unchanged and the flag acts as a dimension guard.
    bool no_project = false;
};

// CSV ingestion: header row with exactly one `y` column, `x*` regressor
// columns, optional `z*` instrument columns (z = x when absent).  Cells must
// parse as finite doubles; violations raise ParseError naming the data row.
Dataset load_dataset(const std::string& path, const SchemaOptions& opts);

// Numeric rows (no header) of fixed width d, for h_directional inputs.
std::vector<Eigen::VectorXd> load_direction_rows(const std::string& path, int d);

// 17-significant-digit decimal; parsing the string recovers the exact bits.
std::string format_double(double v);

// JSON emitters (hand rolled so the float contract is exact); every document
// carries schema_version 1.
std::string fit_json(const SeeFit& fit, double q, const char* h_mode,
                     const std::optional<BandwidthReport>& report);
std::string test_json(const TestResult& result, double q, const std::string& kernel);
std::string bandwidth_json(const BandwidthReport& report, double q, const std::string& kernel,
                           const std::optional<std::pair<double, bool>>& directional);

// CSV emitters.
std::string mc_draws_csv(const McResult& result);            // rep,estimator,coef,value
std::string mc_summary_csv(const McResult& result);          // estimator,coef,mse,robust_mse,median_bias
std::string power_curve_csv(const PowerCurve& curve);        // delta,estimator,rejection_rate
std::string q_power_csv(const std::vector<double>& tau_sq,
                        const std::vector<double>& value);   // tau_sq,q_value

// Writes to the path, or to stdout when the path is empty.
void write_output(const std::string& text, const std::string& path);

// Companion path for the simulate summary: foo.csv -> foo.summary.csv.
std::string summary_path(const std::string& draws_path);

}  // namespace ivqr
