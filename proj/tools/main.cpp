#include <cmath>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ivqr/bandwidth.hpp"
#include "ivqr/cli_io.hpp"
#include "ivqr/estimator.hpp"
#include "ivqr/inference.hpp"
#include "ivqr/instruments.hpp"
#include "ivqr/kernels.hpp"
#include "ivqr/montecarlo.hpp"
#include "ivqr/probdist.hpp"

namespace {

using namespace ivqr;

// Large enough that the smoothed objective is in its linear regime for any
// reasonable data scale.
constexpr double kHugeBandwidth = 5e6;

struct DataFlags {
    std::string path;
    bool add_intercept = false;
    int sieve_degree = 0;
    bool no_project = false;
};

void add_data_flags(CLI::App* cmd, DataFlags& f) {
    cmd->add_option("--data", f.path, "input CSV with a y column, x* regressors, optional z* instruments")
        ->required();
    cmd->add_flag("--add-intercept", f.add_intercept, "prepend a ones column to both x and z");
    cmd->add_option("--sieve-degree", f.sieve_degree,
                    "replace z by its polynomial sieve basis of this degree")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--no-project", f.no_project,
                  "require exact identification (d_z == d); the moment system is then an "
                  "invertible transform of the projected one, so estimates are unchanged");
}

Dataset load_flagged(const DataFlags& f, double q) {
    SchemaOptions opts;
    opts.add_intercept = f.add_intercept;
    opts.sieve_degree = f.sieve_degree;
    opts.no_project = f.no_project;
    Dataset data = load_dataset(f.path, opts);
    data.q = q;
    return data;
}

HMode parse_h_flag(const std::string& text, double& value) {
    if (text == "plugin") return HMode::plugin;
    if (text == "tiny") return HMode::tiny;
    if (text == "huge") return HMode::huge;
    char* end = nullptr;
    value = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0' || !std::isfinite(value) || value <= 0.0) {
        throw CLI::ValidationError("--h", "expected plugin, tiny, huge, or a positive number");
    }
    return HMode::fixed;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string current;
    for (const char c : text) {
        if (c == ',') {
            if (!current.empty()) out.push_back(current);
            current.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            current.push_back(c);
        }
    }
    if (!current.empty()) out.push_back(current);
    return out;
}

std::vector<double> split_doubles(const std::string& text, const char* flag) {
    std::vector<double> out;
    for (const std::string& item : split_list(text)) {
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (end == item.c_str() || *end != '\0' || !std::isfinite(v)) {
            throw CLI::ValidationError(flag, "cannot read \"" + item + "\" as a number");
        }
        out.push_back(v);
    }
    return out;
}

// start:end:step, inclusive of end up to rounding in the last step
std::vector<double> parse_grid(const std::string& text) {
    const std::vector<std::string> parts = [&] {
        std::vector<std::string> p;
        std::string cur;
        for (const char c : text) {
            if (c == ':') {
                p.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        p.push_back(cur);
        return p;
    }();
    if (parts.size() != 3) throw CLI::ValidationError("--tau2-grid", "expected start:end:step");
    const std::vector<double> v = split_doubles(parts[0] + "," + parts[1] + "," + parts[2], "--tau2-grid");
    const double start = v[0];
    const double end = v[1];
    const double step = v[2];
    if (step <= 0.0 || end < start) {
        throw CLI::ValidationError("--tau2-grid", "need step > 0 and end >= start");
    }
    std::vector<double> grid;
    const long count = static_cast<long>(std::floor((end - start) / step + 1e-9)) + 1;
    grid.reserve(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) grid.push_back(start + step * static_cast<double>(i));
    return grid;
}

void require_format(const std::string& requested, const char* native) {
    if (!requested.empty() && requested != native) {
        throw CLI::ValidationError("--format", std::string("this command emits ") + native);
    }
}

// The indicator-limit reference has no Newton iterations; its moment norm is
// the unsmoothed estimating equation evaluated at the reported solution.
SeeFit tiny_h_fit(const Dataset& data, double q, const std::string& kernel) {
    SeeFit fit;
    fit.beta = unsmoothed_qr_reference(data, q);
    fit.h = 0.0;
    fit.kernel = kernel;
    fit.residuals = data.y - data.x * fit.beta;
    const Eigen::MatrixXd ztilde = project_instruments(data.x, data.z);
    const Eigen::ArrayXd weight = (fit.residuals.array() < 0.0).cast<double>() - q;
    const Eigen::VectorXd moments =
        (ztilde.array().colwise() * weight).colwise().sum().transpose() /
        std::sqrt(static_cast<double>(data.n()));
    fit.moment_norm = moments.norm();
    fit.iterations = 0;
    return fit;
}

const FitResult& selected_fit(const BandwidthReport& report) {
    for (const auto& [family, candidate] : report.candidates) {
        if (candidate == report.selected) {
            for (const FitResult& fit : report.fits) {
                if (fit.converged && fit.family.family == family) return fit;
            }
        }
    }
    throw std::runtime_error("no converged density fit matches the selected bandwidth");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"smoothed estimating-equations quantile regression with instruments"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read option defaults from an INI file");
    // --h is a real option on fit and test, so help keeps only its long form
    app.set_help_flag("--help", "print help and exit");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "estimate coefficients at one quantile");
    fit_cmd->set_help_flag("--help", "print help and exit");
    DataFlags fit_data;
    add_data_flags(fit_cmd, fit_data);
    double fit_q = 0.5;
    std::string fit_kernel = "horowitz4";
    std::string fit_h = "plugin";
    std::string fit_out;
    std::string fit_format;
    fit_cmd->add_option("--q", fit_q, "quantile level in (0, 1)");
    fit_cmd->add_option("--kernel", fit_kernel, "smoothing kernel name");
    fit_cmd->add_option("--h", fit_h, "bandwidth: plugin, tiny, huge, or a positive value");
    fit_cmd->add_option("--out", fit_out, "write output here instead of stdout");
    fit_cmd->add_option("--format", fit_format, "output format (json)");
    fit_cmd->callback([&] {
        require_format(fit_format, "json");
        RunConfig cfg;
        cfg.command = Command::fit;
        cfg.q = fit_q;
        cfg.kernel = fit_kernel;
        cfg.h_mode = parse_h_flag(fit_h, cfg.h_fixed);
        cfg.output = fit_out;
        cfg.validate();
        const Dataset data = load_flagged(fit_data, cfg.q);
        const SmoothingKernel& kernel = kernel_by_name(cfg.kernel);
        std::string out;
        switch (cfg.h_mode) {
            case HMode::plugin: {
                const BandwidthReport report = plugin_bandwidth(data, cfg.q, kernel);
                out = fit_json(solve_see(data, report.selected, kernel), cfg.q, "plugin", report);
                break;
            }
            case HMode::fixed:
                out = fit_json(solve_see(data, cfg.h_fixed, kernel), cfg.q, "fixed", std::nullopt);
                break;
            case HMode::huge:
                out = fit_json(solve_see(data, kHugeBandwidth, kernel), cfg.q, "huge", std::nullopt);
                break;
            case HMode::tiny:
                out = fit_json(tiny_h_fit(data, cfg.q, cfg.kernel), cfg.q, "tiny", std::nullopt);
                break;
        }
        write_output(out, cfg.output);
    });

    // test
    auto* test_cmd = app.add_subcommand("test", "test H0: beta = beta0");
    test_cmd->set_help_flag("--help", "print help and exit");
    DataFlags test_data;
    add_data_flags(test_cmd, test_data);
    double test_q = 0.5;
    std::string test_kernel = "horowitz4";
    std::string test_h = "plugin";
    std::string test_beta0;
    double test_alpha = 0.05;
    std::string test_out;
    std::string test_format;
    test_cmd->add_option("--q", test_q, "quantile level in (0, 1)");
    test_cmd->add_option("--kernel", test_kernel, "smoothing kernel name");
    test_cmd->add_option("--beta0", test_beta0, "null coefficient vector, comma separated")->required();
    test_cmd->add_option("--alpha", test_alpha, "nominal level in (0, 1)");
    test_cmd->add_option("--h", test_h, "bandwidth for the statistic: plugin or a positive value");
    test_cmd->add_option("--out", test_out, "write output here instead of stdout");
    test_cmd->add_option("--format", test_format, "output format (json)");
    test_cmd->callback([&] {
        require_format(test_format, "json");
        RunConfig cfg;
        cfg.command = Command::test;
        cfg.q = test_q;
        cfg.kernel = test_kernel;
        cfg.alpha = test_alpha;
        cfg.h_mode = parse_h_flag(test_h, cfg.h_fixed);
        cfg.output = test_out;
        cfg.validate();
        if (cfg.h_mode != HMode::plugin && cfg.h_mode != HMode::fixed) {
            throw CLI::ValidationError("--h", "test supports plugin or a positive value");
        }
        const Dataset data = load_flagged(test_data, cfg.q);
        const std::vector<double> b0 = split_doubles(test_beta0, "--beta0");
        if (static_cast<Eigen::Index>(b0.size()) != data.d()) {
            throw CLI::ValidationError(
                "--beta0", "expected " + std::to_string(data.d()) + " coefficients, got " +
                               std::to_string(b0.size()));
        }
        const Eigen::VectorXd beta0 =
            Eigen::Map<const Eigen::VectorXd>(b0.data(), static_cast<Eigen::Index>(b0.size()));
        const SmoothingKernel& kernel = kernel_by_name(cfg.kernel);
        const std::optional<double> mode =
            cfg.h_mode == HMode::fixed ? std::optional<double>(cfg.h_fixed) : std::nullopt;
        const TestResult result = run_test(data, beta0, cfg.alpha, kernel, mode);
        write_output(test_json(result, cfg.q, cfg.kernel), cfg.output);
    });

    // bandwidth
    auto* bw_cmd = app.add_subcommand("bandwidth", "plug-in bandwidth report");
    DataFlags bw_data;
    add_data_flags(bw_cmd, bw_data);
    double bw_q = 0.5;
    std::string bw_kernel = "horowitz4";
    std::string bw_directions;
    std::string bw_out;
    std::string bw_format;
    bw_cmd->add_option("--q", bw_q, "quantile level in (0, 1)");
    bw_cmd->add_option("--kernel", bw_kernel, "smoothing kernel name");
    bw_cmd->add_option("--directions", bw_directions,
                       "CSV of direction vectors (one row per c, no header) for a directional bandwidth");
    bw_cmd->add_option("--out", bw_out, "write output here instead of stdout");
    bw_cmd->add_option("--format", bw_format, "output format (json)");
    bw_cmd->callback([&] {
        require_format(bw_format, "json");
        RunConfig cfg;
        cfg.command = Command::bandwidth;
        cfg.q = bw_q;
        cfg.kernel = bw_kernel;
        cfg.output = bw_out;
        cfg.validate();
        const Dataset data = load_flagged(bw_data, cfg.q);
        const SmoothingKernel& kernel = kernel_by_name(cfg.kernel);
        const BandwidthReport report = plugin_bandwidth(data, cfg.q, kernel);
        std::optional<std::pair<double, bool>> directional;
        if (!bw_directions.empty()) {
            const std::vector<Eigen::VectorXd> rows =
                load_direction_rows(bw_directions, static_cast<int>(data.d()));
            const SmoothingMoments moments = estimate_moments(data, selected_fit(report), kernel);
            bool substituted = false;
            const double value =
                h_directional(rows, moments, static_cast<int>(data.n()), kernel.r, &substituted);
            directional = std::make_pair(value, substituted);
        }
        write_output(bandwidth_json(report, cfg.q, cfg.kernel, directional), cfg.output);
    });

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo over a named design");
    std::string sim_dgp;
    int sim_reps = 1000;
    std::string sim_estimators = "see-plugin,tiny-h,iv";
    std::uint64_t sim_seed = 42;
    int sim_parallelism = 1;
    int sim_n = 0;
    double sim_q = 0.0;
    bool sim_full_scale = false;
    std::string sim_out;
    std::string sim_format;
    sim_cmd->add_option("--dgp", sim_dgp, "design name, e.g. H11 or JTPA2s")->required();
    sim_cmd->add_option("--reps", sim_reps, "number of replications")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--estimators", sim_estimators,
                        "comma-separated estimator specs (see-plugin, see-h=<v>, tiny-h, scf, "
                        "scf-h=<v>, iv, truth)");
    sim_cmd->add_option("--seed", sim_seed, "master seed; replication r uses a stream hashed from it");
    sim_cmd->add_option("--parallelism", sim_parallelism, "worker threads; results do not depend on it")
        ->check(CLI::PositiveNumber);
    sim_cmd->add_option("--n", sim_n, "override the design sample size")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--q", sim_q, "override the design quantile level");
    sim_cmd->add_flag("--full-scale", sim_full_scale, "restore the full documented sample size");
    sim_cmd->add_option("--out", sim_out,
                        "write per-replication draws here; the summary goes to the companion "
                        ".summary.csv path");
    sim_cmd->add_option("--format", sim_format, "output format (csv)");
    sim_cmd->callback([&] {
        require_format(sim_format, "csv");
        DgpSpec dgp = make_dgp(dgp_by_name(sim_dgp));
        dgp.full_scale = sim_full_scale;
        if (sim_n > 0) dgp.n = sim_n;
        if (sim_q != 0.0) {
            if (!(sim_q > 0.0 && sim_q < 1.0)) {
                throw CLI::ValidationError("--q", "quantile level must lie in (0, 1)");
            }
            dgp.q = sim_q;
        }
        const std::vector<std::string> estimators = split_list(sim_estimators);
        if (estimators.empty()) throw CLI::ValidationError("--estimators", "empty list");
        for (const std::string& spec : estimators) validate_estimator_spec(spec, dgp.id);
        const McResult result = run_mc(dgp, estimators, sim_reps, sim_seed, sim_parallelism);
        for (std::size_t e = 0; e < result.estimator_labels.size(); ++e) {
            if (result.failures[e] > 0) {
                std::cerr << "estimator " << result.estimator_labels[e] << ": " << result.failures[e]
                          << " of " << sim_reps << " replications failed\n";
            }
        }
        if (sim_out.empty()) {
            write_output(mc_summary_csv(result), "");
        } else {
            write_output(mc_draws_csv(result), sim_out);
            write_output(mc_summary_csv(result), summary_path(sim_out));
        }
    });

    // power: noncentral limit of the corrected test, no data involved
    auto* power_cmd = app.add_subcommand("power", "limiting local power curve of the corrected test");
    int power_d = 2;
    int power_r = 4;
    double power_alpha = 0.10;
    std::string power_grid = "0:20:0.1";
    std::string power_out;
    std::string power_format;
    power_cmd->add_option("--d", power_d, "number of restrictions")->check(CLI::PositiveNumber);
    power_cmd->add_option("--r", power_r, "kernel smoothness order")->check(CLI::PositiveNumber);
    power_cmd->add_option("--alpha", power_alpha, "nominal level in (0, 1)");
    power_cmd->add_option("--tau2-grid", power_grid, "noncentrality grid start:end:step");
    power_cmd->add_option("--out", power_out, "write output here instead of stdout");
    power_cmd->add_option("--format", power_format, "output format (csv)");
    power_cmd->callback([&] {
        require_format(power_format, "csv");
        if (!(power_alpha > 0.0 && power_alpha < 1.0)) {
            throw CLI::ValidationError("--alpha", "nominal level must lie in (0, 1)");
        }
        const std::vector<double> grid = parse_grid(power_grid);
        const double c_alpha = chi_sq_quantile(1.0 - power_alpha, power_d);
        std::vector<double> values;
        values.reserve(grid.size());
        for (const double tau_sq : grid) {
            values.push_back(q_power(c_alpha, tau_sq, power_r, power_d));
        }
        write_output(q_power_csv(grid, values), power_out);
    });

    // power-curve: simulated size-adjusted power over a named design
    auto* curve_cmd = app.add_subcommand("power-curve", "size-adjusted power by simulation");
    std::string curve_dgp;
    int curve_reps = 1000;
    double curve_alpha = 0.10;
    std::uint64_t curve_seed = 42;
    std::string curve_deltas = "1,2,4,8";
    std::string curve_modes = "see-plugin,tiny-h";
    std::string curve_out;
    std::string curve_format;
    curve_cmd->add_option("--dgp", curve_dgp, "design name")->required();
    curve_cmd->add_option("--reps", curve_reps, "replications (at least 200)")->check(CLI::PositiveNumber);
    curve_cmd->add_option("--alpha", curve_alpha, "nominal level in (0, 1)");
    curve_cmd->add_option("--seed", curve_seed, "master seed");
    curve_cmd->add_option("--deltas", curve_deltas, "comma-separated deviation magnitudes");
    curve_cmd->add_option("--modes", curve_modes,
                          "comma-separated statistic modes (see-plugin, see-h=<v>, tiny-h)");
    curve_cmd->add_option("--out", curve_out, "write output here instead of stdout");
    curve_cmd->add_option("--format", curve_format, "output format (csv)");
    curve_cmd->callback([&] {
        require_format(curve_format, "csv");
        if (!(curve_alpha > 0.0 && curve_alpha < 1.0)) {
            throw CLI::ValidationError("--alpha", "nominal level must lie in (0, 1)");
        }
        const DgpSpec dgp = make_dgp(dgp_by_name(curve_dgp));
        const std::vector<double> deltas = split_doubles(curve_deltas, "--deltas");
        const std::vector<std::string> modes = split_list(curve_modes);
        if (modes.empty()) throw CLI::ValidationError("--modes", "empty list");
        const PowerCurve curve =
            size_adjusted_power(dgp, deltas, curve_reps, curve_alpha, curve_seed, modes);
        write_output(power_curve_csv(curve), curve_out);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
