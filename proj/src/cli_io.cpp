#include "ivqr/cli_io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ivqr/instruments.hpp"
#include "ivqr/probdist.hpp"

namespace ivqr {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string current;
    for (const char c : line) {
        if (c == ',') {
            fields.push_back(trim(current));
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    fields.push_back(trim(current));
    return fields;
}

// Non-blank lines with trailing CR stripped; data rows keep their 1-based
// position among data rows, not file lines, so blank separators are harmless.
std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError(path + ": cannot open file");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        lines.push_back(line);
    }
    return lines;
}

double parse_cell(const std::string& text, long row, const std::string& column) {
    const char* begin = text.c_str();
    char* end = nullptr;
    const double value = std::strtod(begin, &end);
    if (end == begin || *end != '\0' || !std::isfinite(value)) {
        throw ParseError("row " + std::to_string(row) + ", column " + column +
                         ": cannot read \"" + text + "\" as a finite number");
    }
    return value;
}

void require_full_rank(const Eigen::MatrixXd& m, const char* label) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
    if (qr.rank() < m.cols()) {
        throw RankError(std::string(label) + " matrix has rank " + std::to_string(qr.rank()) +
                        " but " + std::to_string(m.cols()) + " columns; drop collinear columns");
    }
}

Eigen::MatrixXd prepend_ones(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out(m.rows(), m.cols() + 1);
    out.col(0).setOnes();
    out.rightCols(m.cols()) = m;
    return out;
}

std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (const char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default:
                if (static_cast<unsigned char>(c) < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out.push_back(c);
                }
        }
    }
    return out;
}

std::string json_string(const std::string& s) { return "\"" + json_escape(s) + "\""; }

// JSON has no NaN/Inf literals, so non-finite values become tagged strings.
std::string json_number(double v) {
    if (std::isfinite(v)) return format_double(v);
    if (std::isnan(v)) return "\"nan\"";
    return v > 0.0 ? "\"inf\"" : "\"-inf\"";
}

std::string json_bool(bool b) { return b ? "true" : "false"; }

std::string json_array(const Eigen::VectorXd& v) {
    std::string out = "[";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i > 0) out += ", ";
        out += json_number(v(i));
    }
    out += "]";
    return out;
}

std::string json_array(const std::vector<double>& v) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i > 0) out += ", ";
        out += json_number(v[i]);
    }
    out += "]";
    return out;
}

// Report fields shared by the fit and bandwidth documents, without braces.
std::string bandwidth_fields(const BandwidthReport& report) {
    std::string out;
    out += "\"h0\": " + json_number(report.h0);
    out += ", \"selected\": " + json_number(report.selected);
    out += ", \"substituted_zero_derivative\": " + json_bool(report.substituted_zero_derivative);
    out += ", \"candidates\": {";
    bool first = true;
    for (const auto& [family, value] : report.candidates) {
        if (!first) out += ", ";
        first = false;
        out += json_string(family_name(family)) + ": " + json_number(value);
    }
    out += "}, \"fits\": [";
    for (std::size_t i = 0; i < report.fits.size(); ++i) {
        const FitResult& fit = report.fits[i];
        if (i > 0) out += ", ";
        out += "{\"family\": " + json_string(family_name(fit.family.family));
        out += ", \"converged\": " + json_bool(fit.converged);
        out += ", \"loglik\": " + json_number(fit.loglik);
        out += ", \"f0\": " + json_number(fit.f0);
        out += ", \"f_r_minus_1_at_0\": " + json_number(fit.f_r_minus_1_at_0);
        out += ", \"params\": " + json_array(fit.family.params);
        out += ", \"shift\": " + json_number(fit.family.shift);
        out += "}";
    }
    out += "]";
    return out;
}

}  // namespace

void RunConfig::validate() const {
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("q must lie strictly in (0, 1)");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie strictly in (0, 1)");
    if (h_mode == HMode::fixed && !(h_fixed > 0.0)) {
        throw std::invalid_argument("fixed bandwidth must be positive");
    }
    if (parallelism < 1) throw std::invalid_argument("parallelism must be at least 1");
}

Dataset load_dataset(const std::string& path, const SchemaOptions& opts) {
    const std::vector<std::string> lines = read_lines(path);
    if (lines.empty()) throw SchemaError(path + ": empty file, expected a header row");

    const std::vector<std::string> header = split_fields(lines[0]);
    std::vector<std::size_t> y_cols;
    std::vector<std::size_t> x_cols;
    std::vector<std::size_t> z_cols;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string& name = header[i];
        if (name.empty()) throw SchemaError(path + ": header has an empty column name");
        switch (name[0]) {
            case 'y': y_cols.push_back(i); break;
            case 'x': x_cols.push_back(i); break;
            case 'z': z_cols.push_back(i); break;
            default:
                throw SchemaError(path + ": unrecognized column \"" + name +
                                  "\"; names must start with y, x, or z");
        }
    }
    if (y_cols.size() != 1) {
        throw SchemaError(path + ": expected exactly one y column, found " +
                          std::to_string(y_cols.size()));
    }
    if (x_cols.empty()) throw SchemaError(path + ": no x regressor columns");

    const long n = static_cast<long>(lines.size()) - 1;
    if (n < 1) throw SchemaError(path + ": no data rows");

    Eigen::VectorXd y(n);
    Eigen::MatrixXd x(n, static_cast<Eigen::Index>(x_cols.size()));
    Eigen::MatrixXd z_raw(n, static_cast<Eigen::Index>(z_cols.size()));
    for (long row = 1; row <= n; ++row) {
        const std::vector<std::string> fields = split_fields(lines[static_cast<std::size_t>(row)]);
        if (fields.size() != header.size()) {
            throw ParseError("row " + std::to_string(row) + ": expected " +
                             std::to_string(header.size()) + " fields, found " +
                             std::to_string(fields.size()));
        }
        y(row - 1) = parse_cell(fields[y_cols[0]], row, header[y_cols[0]]);
        for (std::size_t j = 0; j < x_cols.size(); ++j) {
            x(row - 1, static_cast<Eigen::Index>(j)) =
                parse_cell(fields[x_cols[j]], row, header[x_cols[j]]);
        }
        for (std::size_t j = 0; j < z_cols.size(); ++j) {
            z_raw(row - 1, static_cast<Eigen::Index>(j)) =
                parse_cell(fields[z_cols[j]], row, header[z_cols[j]]);
        }
    }

    Dataset data;
    data.y = y;
    data.x = opts.add_intercept ? prepend_ones(x) : x;
    // The intercept is its own instrument, so it joins z as well; when no z
    // columns exist the regressors are exogenous and instrument themselves.
    if (z_cols.empty()) {
        data.z = data.x;
    } else {
        data.z = opts.add_intercept ? prepend_ones(z_raw) : z_raw;
    }
    if (opts.sieve_degree >= 1) data.z = sieve_basis(data.z, opts.sieve_degree);

    if (data.z.cols() < data.x.cols()) {
        throw SchemaError(path + ": " + std::to_string(data.z.cols()) + " instrument columns for " +
                          std::to_string(data.x.cols()) +
                          " regressors; identification needs d_z >= d (exact identification at "
                          "d_z = d), so add instruments or raise --sieve-degree");
    }
    if (opts.no_project && data.z.cols() != data.x.cols()) {
        throw SchemaError(path + ": --no-project requires exact identification (d_z == d), got d_z = " +
                          std::to_string(data.z.cols()) + ", d = " + std::to_string(data.x.cols()));
    }

    require_full_rank(data.x, "regressor");
    require_full_rank(data.z, "instrument");
    return data;
}

std::vector<Eigen::VectorXd> load_direction_rows(const std::string& path, int d) {
    const std::vector<std::string> lines = read_lines(path);
    if (lines.empty()) throw SchemaError(path + ": no direction rows");
    std::vector<Eigen::VectorXd> rows;
    rows.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::vector<std::string> fields = split_fields(lines[i]);
        if (fields.size() != static_cast<std::size_t>(d)) {
            throw ParseError("row " + std::to_string(i + 1) + ": expected " + std::to_string(d) +
                             " fields, found " + std::to_string(fields.size()));
        }
        Eigen::VectorXd c(d);
        for (int j = 0; j < d; ++j) {
            c(j) = parse_cell(fields[static_cast<std::size_t>(j)], static_cast<long>(i + 1),
                              "c" + std::to_string(j));
        }
        if (c.norm() == 0.0) throw ParseError("row " + std::to_string(i + 1) + ": zero direction");
        rows.push_back(std::move(c));
    }
    return rows;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fit_json(const SeeFit& fit, double q, const char* h_mode,
                     const std::optional<BandwidthReport>& report) {
    std::string out = "{\n";
    out += "  \"schema_version\": 1,\n";
    out += "  \"command\": \"fit\",\n";
    out += "  \"q\": " + json_number(q) + ",\n";
    out += "  \"kernel\": " + json_string(fit.kernel) + ",\n";
    out += "  \"h_mode\": " + json_string(h_mode) + ",\n";
    out += "  \"h\": " + json_number(fit.h) + ",\n";
    out += "  \"beta\": " + json_array(fit.beta) + ",\n";
    out += "  \"moment_norm\": " + json_number(fit.moment_norm) + ",\n";
    out += "  \"iterations\": " + std::to_string(fit.iterations);
    if (report) out += ",\n  \"bandwidth\": {" + bandwidth_fields(*report) + "}";
    out += "\n}\n";
    return out;
}

std::string test_json(const TestResult& result, double q, const std::string& kernel) {
    std::string out = "{\n";
    out += "  \"schema_version\": 1,\n";
    out += "  \"command\": \"test\",\n";
    out += "  \"q\": " + json_number(q) + ",\n";
    out += "  \"kernel\": " + json_string(kernel) + ",\n";
    out += "  \"alpha\": " + json_number(result.alpha) + ",\n";
    out += "  \"d\": " + std::to_string(result.d) + ",\n";
    out += "  \"h\": " + json_number(result.h) + ",\n";
    out += "  \"s_n\": " + json_number(result.s_n) + ",\n";
    out += "  \"c_alpha\": " + json_number(result.c_alpha) + ",\n";
    out += "  \"c_alpha_star\": " + json_number(result.c_alpha_star) + ",\n";
    out += "  \"c_plus\": " + json_number(result.c_plus) + ",\n";
    out += "  \"reject_first_order\": " + json_bool(result.reject_first_order) + ",\n";
    out += "  \"reject_corrected\": " + json_bool(result.reject_corrected) + ",\n";
    out += "  \"p_value\": " + json_number(result.p_value) + "\n";
    out += "}\n";
    return out;
}

std::string bandwidth_json(const BandwidthReport& report, double q, const std::string& kernel,
                           const std::optional<std::pair<double, bool>>& directional) {
    std::string out = "{\n";
    out += "  \"schema_version\": 1,\n";
    out += "  \"command\": \"bandwidth\",\n";
    out += "  \"q\": " + json_number(q) + ",\n";
    out += "  \"kernel\": " + json_string(kernel) + ",\n";
    out += "  " + bandwidth_fields(report);
    if (directional) {
        out += ",\n  \"h_directional\": {\"value\": " + json_number(directional->first) +
               ", \"substituted_zero_derivative\": " + json_bool(directional->second) + "}";
    }
    out += "\n}\n";
    return out;
}

std::string mc_draws_csv(const McResult& result) {
    std::string out = "rep,estimator,coef,value\n";
    const Eigen::Index reps = result.draws.empty() ? 0 : result.draws[0].rows();
    for (Eigen::Index rep = 0; rep < reps; ++rep) {
        for (std::size_t e = 0; e < result.estimator_labels.size(); ++e) {
            const Eigen::MatrixXd& draws = result.draws[e];
            for (Eigen::Index j = 0; j < draws.cols(); ++j) {
                out += std::to_string(rep + 1);
                out += ',';
                out += result.estimator_labels[e];
                out += ",b";
                out += std::to_string(j);
                out += ',';
                out += format_double(draws(rep, j));
                out += '\n';
            }
        }
    }
    return out;
}

std::string mc_summary_csv(const McResult& result) {
    std::string out = "estimator,coef,mse,robust_mse,median_bias\n";
    for (std::size_t e = 0; e < result.estimator_labels.size(); ++e) {
        for (Eigen::Index j = 0; j < result.mse[e].size(); ++j) {
            out += result.estimator_labels[e];
            out += ",b";
            out += std::to_string(j);
            out += ',';
            out += format_double(result.mse[e](j));
            out += ',';
            out += format_double(result.robust_mse[e](j));
            out += ',';
            out += format_double(result.median_bias[e](j));
            out += '\n';
        }
    }
    return out;
}

std::string power_curve_csv(const PowerCurve& curve) {
    std::string out = "delta,estimator,rejection_rate\n";
    for (std::size_t i = 0; i < curve.deltas.size(); ++i) {
        for (std::size_t m = 0; m < curve.labels.size(); ++m) {
            out += format_double(curve.deltas[i]);
            out += ',';
            out += curve.labels[m];
            out += ',';
            out += format_double(curve.rejection(static_cast<Eigen::Index>(i),
                                                 static_cast<Eigen::Index>(m)));
            out += '\n';
        }
    }
    return out;
}

std::string q_power_csv(const std::vector<double>& tau_sq, const std::vector<double>& value) {
    std::string out = "tau_sq,q_value\n";
    for (std::size_t i = 0; i < tau_sq.size(); ++i) {
        out += format_double(tau_sq[i]);
        out += ',';
        out += format_double(value[i]);
        out += '\n';
    }
    return out;
}

void write_output(const std::string& text, const std::string& path) {
    if (path.empty()) {
        std::cout << text;
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    out.close();
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

std::string summary_path(const std::string& draws_path) {
    const std::string suffix = ".csv";
    if (draws_path.size() > suffix.size() &&
        draws_path.compare(draws_path.size() - suffix.size(), suffix.size(), suffix) == 0) {
        return draws_path.substr(0, draws_path.size() - suffix.size()) + ".summary.csv";
    }
    return draws_path + ".summary.csv";
}

}  // namespace ivqr
