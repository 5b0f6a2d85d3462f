#pragma once

// Load figures, closed-form thresholds and the simulation-based threshold
// estimator.

#include "redund/distributions.hpp"
#include "redund/engine.hpp"
#include "redund/error.hpp"
#include "redund/stats.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace redund {

struct LoadReport {
    std::size_t N = 0, d = 0;
    double lambda = 0.0;
    double mean = 0.0;  // E[X]
    double e_min = 0.0; // E[min of the d replica sizes]
    double e_min_std_error = 0.0;
    bool e_min_analytic = true;
    double rho = 0.0;                    // lambda E[X] / N
    double rho_tilde = 0.0;              // d lambda E[min] / N
    double lambda_crit_fluid = 0.0;      // N / (d E[min])
    double lambda_crit_sufficient = 0.0; // N / (d E[X])
};

inline LoadReport load_report(std::size_t N, std::size_t d, double lambda,
                              const JobSizeModel& model, const DependenceModel& dep,
                              const EminMethod& method = Analytic{})
{
    if (d < 1 || d > N)
        throw ConfigError("load report needs 1 <= d <= N");
    if (!(lambda > 0.0))
        throw ConfigError("lambda must be positive");
    const auto em = expected_min(dep, model, d, method);
    LoadReport r;
    r.N = N;
    r.d = d;
    r.lambda = lambda;
    r.mean = model.mean();
    r.e_min = em.value;
    r.e_min_std_error = em.std_error;
    r.e_min_analytic = em.analytic;
    const double n = static_cast<double>(N), dd = static_cast<double>(d);
    r.rho = lambda * r.mean / n;
    r.rho_tilde = dd * lambda * r.e_min / n;
    r.lambda_crit_fluid = n / (dd * r.e_min);
    r.lambda_crit_sufficient = n / (dd * r.mean);
    return r;
}

/// Asymptotic stability thresholds in lambda for scaled-Bernoulli(K) sizes:
/// FCFS needs lambda < K^(d-1), PS needs lambda d / (N K^(d-1)) < 1.
inline std::pair<double, double> bernoulli_thresholds(std::size_t N, std::size_t d, double K)
{
    if (d < 1 || d > N)
        throw ConfigError("bernoulli thresholds need 1 <= d <= N");
    if (!(K > 0.0))
        throw ConfigError("K must be positive");
    const double base = std::pow(K, static_cast<double>(d) - 1.0);
    return {base, base * (static_cast<double>(N) / static_cast<double>(d))};
}

enum class DriftVerdict { Stable, Unstable, Indeterminate };

inline const char* to_string(DriftVerdict v) noexcept
{
    switch (v) {
    case DriftVerdict::Stable: return "stable";
    case DriftVerdict::Unstable: return "unstable";
    case DriftVerdict::Indeterminate: return "indeterminate";
    }
    return "?";
}

struct ThresholdPoint {
    double lambda = 0.0;
    double slope = 0.0; // mean over replications of d(total queue)/dt
    double slope_ci_lo = 0.0;
    double slope_ci_hi = 0.0;
    DriftVerdict verdict = DriftVerdict::Indeterminate;
};

struct ThresholdEstimate {
    bool found = false;
    double lambda_star = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::vector<ThresholdPoint> points;
};

struct ThresholdOptions {
    std::size_t replications = 5;
    std::uint64_t arrivals = 100'000;
    std::size_t threads = 0;
    // An unstable verdict also needs the mean slope above this fraction of
    // lambda (jobs per unit time).
    double growth_floor = 1e-3;
};

/// Least-squares slope of the total queue length against time over the
/// trailing half of a record's trajectory.
inline double trailing_drift(const SimulationRecord& rec)
{
    const auto& tr = rec.trajectory;
    if (tr.rows() < 4)
        throw ConfigError("trajectory too short for a drift estimate");
    const double cut = 0.5 * tr.times.back();
    std::vector<double> xs, ys;
    for (std::size_t r = 0; r < tr.rows(); ++r)
        if (tr.times[r] >= cut) {
            xs.push_back(tr.times[r]);
            ys.push_back(tr.total(r));
        }
    return least_squares(xs, ys).slope;
}

/// Sweeps `grid` (strictly increasing). Each point's verdict comes from the
/// 95% interval of the drift across replications: unstable when the interval
/// lies above 0 and the mean exceeds growth_floor * lambda, stable when it
/// lies below 0. The threshold is the zero of the line through the first two
/// points of the final all-unstable run, clamped to the interval between the
/// largest stable point below that run (the grid start if none) and the run's
/// first point; that interval is reported as ci.
inline ThresholdEstimate estimate_threshold(const SystemConfig& base, std::span<const double> grid,
                                            const ThresholdOptions& opts = {})
{
    if (grid.size() < 2)
        throw ConfigError("threshold grid needs at least two points");
    for (std::size_t i = 1; i < grid.size(); ++i)
        if (!(grid[i] > grid[i - 1]))
            throw ConfigError("threshold grid must be strictly increasing");
    if (opts.replications < 2)
        throw ConfigError("threshold estimation needs at least two replications");
    const std::size_t reps = opts.replications;
    std::vector<double> slopes(grid.size() * reps);
    parallel_for(
        slopes.size(),
        [&](std::size_t job) {
            const std::size_t p = job / reps, r = job % reps;
            auto cfg = base;
            cfg.lambda = grid[p];
            cfg.horizon = Horizon::arrivals_count(opts.arrivals);
            cfg.warmup = 0;
            cfg.drain = false;
            cfg.seed = derive_seed(base.seed, p * 100'003 + r);
            slopes[job] = trailing_drift(run(cfg));
        },
        opts.threads);

    ThresholdEstimate est;
    for (std::size_t p = 0; p < grid.size(); ++p) {
        const auto ci = replication_interval(std::span<const double>(slopes).subspan(p * reps, reps));
        ThresholdPoint pt{grid[p], ci.mean, ci.lo(), ci.hi(), DriftVerdict::Indeterminate};
        if (ci.lo() > 0.0 && ci.mean > opts.growth_floor * grid[p])
            pt.verdict = DriftVerdict::Unstable;
        else if (ci.hi() < 0.0)
            pt.verdict = DriftVerdict::Stable;
        est.points.push_back(pt);
    }
    std::size_t k = grid.size();
    while (k > 0 && est.points[k - 1].verdict == DriftVerdict::Unstable)
        --k;
    if (k == 0 || k == grid.size())
        return est;
    std::size_t s = k - 1;
    while (s > 0 && est.points[s].verdict != DriftVerdict::Stable)
        --s;
    const double lo = grid[s], hi = grid[k];
    double star = 0.5 * (grid[k - 1] + hi);
    if (k + 1 < grid.size()) {
        const auto& a = est.points[k];
        const auto& b = est.points[k + 1];
        if (b.slope != a.slope)
            star = a.lambda - a.slope * (b.lambda - a.lambda) / (b.slope - a.slope);
    }
    star = std::clamp(star, lo, hi);
    est.found = true;
    est.lambda_star = star;
    est.ci_lo = lo;
    est.ci_hi = hi;
    return est;
}

struct OrderingReport {
    Aging aging = Aging::Indeterminate;
    std::vector<std::size_t> d_values;
    std::vector<double> thresholds; // lambda_crit_fluid per d, i.i.d. replicas
    bool holds = false;             // nonincreasing for NBU, nondecreasing for NWU
};

/// lambda_crit_fluid over d for i.i.d. replicas, checked against the
/// direction implied by the model's aging class. Monte Carlo (with `mc`)
/// covers d values without a closed form.
inline OrderingReport nbu_threshold_ordering(const JobSizeModel& model, std::size_t N,
                                             std::span<const std::size_t> d_values,
                                             MonteCarlo mc = {}, double rel_tol = 1e-9)
{
    OrderingReport rep;
    rep.aging = classify_aging(model);
    if (rep.aging == Aging::Indeterminate)
        throw ConfigError("model is neither NBU nor NWU on the default grid");
    for (auto d : d_values) {
        EminMethod method = Analytic{};
        const bool closed = model.kind() != SizeKind::Erlang || d == 1;
        if (!closed)
            method = mc;
        rep.d_values.push_back(d);
        rep.thresholds.push_back(
            load_report(N, d, 1.0, model, DependenceModel::iid(), method).lambda_crit_fluid);
    }
    rep.holds = true;
    for (std::size_t i = 1; i < rep.thresholds.size(); ++i) {
        const double prev = rep.thresholds[i - 1], cur = rep.thresholds[i];
        const double slack = rel_tol * std::max(prev, cur);
        if ((rep.aging == Aging::NBU || rep.aging == Aging::ExponentialBoundary) &&
            cur > prev + slack)
            rep.holds = false;
        if ((rep.aging == Aging::NWU || rep.aging == Aging::ExponentialBoundary) &&
            cur < prev - slack)
            rep.holds = false;
    }
    return rep;
}

} // namespace redund
