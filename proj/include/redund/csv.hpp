#pragma once

// CSV output. Every schema the toolkit emits is written here, so the column
// lists below are the reference for downstream readers.

#include "redund/engine.hpp"
#include "redund/error.hpp"
#include "redund/fluid.hpp"
#include "redund/stability.hpp"
#include "redund/virtual_queues.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace redund {

/// Floats use %.10g; non-finite and missing values become empty fields.
inline std::string csv_number(double x)
{
    if (!std::isfinite(x))
        return {};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

inline std::string csv_number(std::optional<double> x) { return x ? csv_number(*x) : std::string{}; }

inline std::string csv_field(std::string_view s)
{
    if (s.find_first_of(",\"\n") == std::string_view::npos)
        return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + '"';
}

class CsvWriter {
public:
    explicit CsvWriter(std::ostream& os) : os_(os) {}

    CsvWriter& operator<<(std::string_view s) { return put(csv_field(s)); }
    CsvWriter& operator<<(const std::string& s) { return put(csv_field(s)); }
    CsvWriter& operator<<(const char* s) { return put(csv_field(s)); }
    CsvWriter& operator<<(double x) { return put(csv_number(x)); }
    CsvWriter& operator<<(std::optional<double> x) { return put(csv_number(x)); }
    CsvWriter& operator<<(std::uint64_t x) { return put(std::to_string(x)); }
    CsvWriter& operator<<(std::uint32_t x) { return put(std::to_string(x)); }
    CsvWriter& operator<<(int x) { return put(std::to_string(x)); }

    void end_row()
    {
        os_ << '\n';
        first_ = true;
    }

    void header(std::initializer_list<std::string_view> cols)
    {
        for (auto c : cols)
            *this << c;
        end_row();
    }

private:
    CsvWriter& put(const std::string& field)
    {
        if (!first_)
            os_ << ',';
        os_ << field;
        first_ = false;
        return *this;
    }

    std::ostream& os_;
    bool first_ = true;
};

inline std::ofstream open_output(const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw Error("cannot open '" + path + "' for writing");
    return os;
}

/// latencies.csv: job_id, arrival_time, latency
inline void write_latencies(std::ostream& os, const SimulationRecord& rec)
{
    CsvWriter w(os);
    w.header({"job_id", "arrival_time", "latency"});
    for (const auto& l : rec.latencies) {
        w << l.job_id << l.arrival << l.latency;
        w.end_row();
    }
}

/// trajectory.csv: time, q_1..q_N
inline void write_trajectory(std::ostream& os, const SimulationRecord& rec)
{
    CsvWriter w(os);
    const auto& tr = rec.trajectory;
    w << "time";
    for (std::size_t s = 1; s <= tr.N; ++s)
        w << "q_" + std::to_string(s);
    w.end_row();
    for (std::size_t r = 0; r < tr.rows(); ++r) {
        w << tr.times[r];
        for (auto q : tr.row(r))
            w << q;
        w.end_row();
    }
}

struct SummaryRow {
    Variant variant = Variant::Original;
    double lambda = 0.0;
    double mean_latency = 0.0;
    std::optional<double> ci_halfwidth;
    std::uint64_t n_jobs = 0;
    std::uint64_t seed = 0;
};

/// summary.csv: variant, lambda, mean_latency, ci_halfwidth, n_jobs, seed
inline void write_summary(std::ostream& os, std::span<const SummaryRow> rows)
{
    CsvWriter w(os);
    w.header({"variant", "lambda", "mean_latency", "ci_halfwidth", "n_jobs", "seed"});
    for (const auto& r : rows) {
        w << to_string(r.variant) << r.lambda << r.mean_latency << r.ci_halfwidth << r.n_jobs
          << r.seed;
        w.end_row();
    }
}

/// classes.csv: class_id, server_set (1-based servers separated by spaces)
inline void write_classes(std::ostream& os, const ClassIndex& idx)
{
    CsvWriter w(os);
    w.header({"class_id", "server_set"});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::string set;
        for (auto s : idx.server_sets[i])
            set += (set.empty() ? "" : " ") + std::to_string(s + 1);
        w << static_cast<std::uint64_t>(i + 1) << set;
        w.end_row();
    }
}

/// fluid.csv: t, q_1..q_M, Phi_1..Phi_M
inline void write_fluid(std::ostream& os, const FluidPath& path)
{
    CsvWriter w(os);
    w << "t";
    for (std::size_t i = 1; i <= path.columns; ++i)
        w << "q_" + std::to_string(i);
    for (std::size_t i = 1; i <= path.columns; ++i)
        w << "Phi_" + std::to_string(i);
    w.end_row();
    for (std::size_t k = 0; k < path.points(); ++k) {
        w << path.t[k];
        for (std::size_t i = 0; i < path.columns; ++i)
            w << path.q_at(k, i);
        for (std::size_t i = 0; i < path.columns; ++i)
            w << path.phi_at(k, i);
        w.end_row();
    }
}

struct FluidSummaryRow {
    std::string mode;
    double lambda = 0.0;
    double rho_tilde = 0.0;
    double lambda_crit = 0.0;
    double step = 0.0;
    double horizon = 0.0;
    double epsilon = 0.0;
    FluidVerdict verdict;
};

/// fluid_summary.csv: mode, lambda, rho_tilde, lambda_crit, step, horizon,
/// epsilon, verdict, drain_time, slope
inline void write_fluid_summary(std::ostream& os, std::span<const FluidSummaryRow> rows)
{
    CsvWriter w(os);
    w.header({"mode", "lambda", "rho_tilde", "lambda_crit", "step", "horizon", "epsilon", "verdict",
              "drain_time", "slope"});
    for (const auto& r : rows) {
        const bool stable = r.verdict.kind == FluidVerdict::Kind::Stable;
        w << r.mode << r.lambda << r.rho_tilde << r.lambda_crit << r.step << r.horizon << r.epsilon
          << to_string(r.verdict.kind)
          << (stable ? std::optional<double>(r.verdict.drain_time) : std::nullopt) << r.verdict.slope;
        w.end_row();
    }
}

/// threshold.csv: lambda, slope, slope_ci_lo, slope_ci_hi, verdict
inline void write_threshold(std::ostream& os, const ThresholdEstimate& est)
{
    CsvWriter w(os);
    w.header({"lambda", "slope", "slope_ci_lo", "slope_ci_hi", "verdict"});
    for (const auto& p : est.points) {
        w << p.lambda << p.slope << p.slope_ci_lo << p.slope_ci_hi << to_string(p.verdict);
        w.end_row();
    }
}

/// loads.csv: N, d, lambda, dist, dep, mean, e_min, e_min_std_error,
/// e_min_method, rho, rho_tilde, lambda_crit_fluid, lambda_crit_sufficient
struct LoadRow {
    std::string dist;
    std::string dep;
    LoadReport report;
};

inline void write_loads(std::ostream& os, std::span<const LoadRow> rows)
{
    CsvWriter w(os);
    w.header({"N", "d", "lambda", "dist", "dep", "mean", "e_min", "e_min_std_error", "e_min_method",
              "rho", "rho_tilde", "lambda_crit_fluid", "lambda_crit_sufficient"});
    for (const auto& row : rows) {
        const auto& r = row.report;
        w << static_cast<std::uint64_t>(r.N) << static_cast<std::uint64_t>(r.d) << r.lambda
          << row.dist << row.dep << r.mean << r.e_min << r.e_min_std_error
          << (r.e_min_analytic ? "analytic" : "monte_carlo") << r.rho << r.rho_tilde
          << r.lambda_crit_fluid << r.lambda_crit_sufficient;
        w.end_row();
    }
}

} // namespace redund
