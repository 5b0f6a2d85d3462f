#pragma once

// Fluid model of the bound systems: per-class mass q_i(t) driven by the
// cumulative per-job attained service Phi_i(t). Solved by explicit time
// stepping with a trapezoid rule over past arrival epochs.

#include "redund/distributions.hpp"
#include "redund/error.hpp"
#include "redund/stats.hpp"
#include "redund/virtual_queues.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace redund {

enum class FluidMode { Scalar, Min, Max };

inline const char* to_string(FluidMode m) noexcept
{
    switch (m) {
    case FluidMode::Scalar: return "scalar";
    case FluidMode::Min: return "min";
    case FluidMode::Max: return "max";
    }
    return "?";
}

inline FluidMode parse_fluid_mode(std::string_view text)
{
    const auto s = to_lower(trim(text));
    if (s == "scalar")
        return FluidMode::Scalar;
    if (s == "min")
        return FluidMode::Min;
    if (s == "max")
        return FluidMode::Max;
    throw ConfigError("unknown fluid mode '" + std::string(text) + "'");
}

/// Age of the mass present at time 0.
enum class InitialAge { Fresh, EquilibriumResidual };

struct FluidConfig {
    std::size_t N = 1;
    std::size_t d = 1;
    double lambda = 0.5;
    std::function<double(double)> min_survival; // P(X_min > x)
    double min_mean = 0.0;                      // E[X_min]
    InitialAge initial = InitialAge::Fresh;
    std::vector<double> q0{0.0}; // one value (every class) or one per class
    double step = 0.01;
    double horizon = 10.0;
    double epsilon = 0.0; // 0 selects 10 * (lambda / M) * step
    FluidMode mode = FluidMode::Scalar;

    std::size_t classes() const { return static_cast<std::size_t>(binomial(N, d)); }
    double class_arrival_rate() const { return lambda / static_cast<double>(classes()); }
    double speed_divisor() const { return binomial(N - 1, d - 1); }
    double effective_epsilon() const
    {
        return epsilon > 0.0 ? epsilon : 10.0 * class_arrival_rate() * step;
    }
    std::size_t steps() const
    {
        return static_cast<std::size_t>(std::llround(std::ceil(horizon / step - 1e-9)));
    }

    void validate() const
    {
        if (d < 1 || d > N)
            throw ConfigError("fluid needs 1 <= d <= N");
        if (!(lambda > 0.0))
            throw ConfigError("fluid lambda must be positive");
        if (!min_survival)
            throw ConfigError("fluid needs the survival function of the minimum size");
        if (!(step > 0.0) || !(horizon > 0.0) || !(epsilon >= 0.0))
            throw ConfigError("fluid needs step > 0, horizon > 0, epsilon >= 0");
        if (initial == InitialAge::EquilibriumResidual && !(min_mean > 0.0))
            throw ConfigError("equilibrium initial ages need a positive E[X_min]");
        if (q0.empty())
            throw ConfigError("fluid needs an initial mass");
        for (double q : q0)
            if (!(q >= 0.0))
                throw ConfigError("initial masses must be nonnegative");
        if (mode == FluidMode::Scalar && q0.size() != 1)
            throw ConfigError("scalar fluid takes a single initial mass");
        if (mode != FluidMode::Scalar && q0.size() != 1 && q0.size() != classes())
            throw ConfigError("vector fluid needs 1 or C(N,d) initial masses");
        if (steps() > 2'000'000)
            throw ConfigError("fluid grid too large (horizon / step > 2e6)");
    }
};

/// Fills the distribution-dependent fields from a job-size model.
inline FluidConfig fluid_config(std::size_t N, std::size_t d, double lambda,
                                const JobSizeModel& model, const DependenceModel& dep)
{
    FluidConfig cfg;
    cfg.N = N;
    cfg.d = d;
    cfg.lambda = lambda;
    cfg.min_survival = [model, dep, d](double x) { return min_survival(dep, model, d, x); };
    try {
        cfg.min_mean = expected_min(dep, model, d).value;
    } catch (const UnsupportedCombination&) {
        cfg.min_mean = expected_min(dep, model, d, MonteCarlo{1'000'000, 1}).value;
    }
    return cfg;
}

struct FluidPath {
    double step = 0.0;
    std::size_t columns = 1; // 1 for the scalar solver, C(N,d) otherwise
    double class_arrival_rate = 0.0;
    double epsilon = 0.0;
    std::vector<double> t;
    std::vector<double> q;   // row k: q[k*columns + i]
    std::vector<double> phi; // same layout
    std::optional<double> drain_time;

    std::size_t points() const noexcept { return t.size(); }
    double q_at(std::size_t k, std::size_t i) const { return q[k * columns + i]; }
    double phi_at(std::size_t k, std::size_t i) const { return phi[k * columns + i]; }
    double mean_mass(std::size_t k) const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < columns; ++i)
            s += q_at(k, i);
        return s / static_cast<double>(columns);
    }
    std::span<const double> q_row(std::size_t k) const { return {q.data() + k * columns, columns}; }
};

namespace detail {

// Smallest x with f(x) == 0 for a nonincreasing f, or +inf if f never vanishes.
inline double zero_point(const std::function<double(double)>& f)
{
    if (f(0.0) <= 0.0)
        return 0.0;
    double hi = 1.0;
    while (f(hi) > 0.0) {
        hi *= 2.0;
        if (hi > 1e300)
            return std::numeric_limits<double>::infinity();
    }
    double lo = 0.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) > 0.0 ? lo : hi) = mid;
    }
    return hi;
}

} // namespace detail

/// Explicit scheme on t_k = k*h:
///   Phi_i(t_{k+1}) = Phi_i(t_k) + h * rate_i(q(t_k))   (frozen while q_i <= epsilon)
///   q_i(t_{k+1})   = q0_i * Gbar(Phi_i(t_{k+1}))
///                    + (lambda/M) * trapezoid_s Fbar_min(Phi_i(t_{k+1}) - Phi_i(s))
/// Scalar mode uses rate 1/(C(N-1,d-1) q); Min/Max modes use class_rate.
inline FluidPath solve_fluid(const FluidConfig& cfg)
{
    cfg.validate();
    const bool scalar = cfg.mode == FluidMode::Scalar;
    std::optional<ClassIndex> idx;
    if (!scalar)
        idx = build_class_index(cfg.N, cfg.d);
    const std::size_t cols = scalar ? 1 : idx->size();
    const std::size_t K = cfg.steps();
    const double h = cfg.step;
    const double a = cfg.class_arrival_rate();
    const double C = cfg.speed_divisor();
    const double eps = cfg.effective_epsilon();
    const RateMode rmode = cfg.mode == FluidMode::Max ? RateMode::Max : RateMode::Min;
    const auto& fbar = cfg.min_survival;
    const double zero_beyond = detail::zero_point(fbar);

    FluidPath path;
    path.step = h;
    path.columns = cols;
    path.class_arrival_rate = a;
    path.epsilon = eps;
    path.t.resize(K + 1);
    path.q.resize((K + 1) * cols);
    path.phi.assign((K + 1) * cols, 0.0);

    std::vector<double> q0(cols);
    for (std::size_t i = 0; i < cols; ++i)
        q0[i] = cfg.q0.size() == 1 ? cfg.q0[0] : cfg.q0[i];
    std::copy(q0.begin(), q0.end(), path.q.begin());

    // Per-class Phi histories, contiguous for the binary search.
    std::vector<std::vector<double>> hist(cols, std::vector<double>(K + 1, 0.0));
    // Equilibrium initial ages: Gbar(x) = 1 - (1/E) * integral_0^x Fbar.
    std::vector<double> eq_integral(cols, 0.0);
    auto initial_survival = [&](std::size_t i, double from, double to) {
        if (cfg.initial == InitialAge::Fresh)
            return fbar(to);
        if (to > from && from < zero_beyond) {
            using boost::math::quadrature::gauss_kronrod;
            eq_integral[i] +=
                gauss_kronrod<double, 31>::integrate(fbar, from, std::min(to, zero_beyond), 10, 1e-12);
        }
        return std::max(0.0, 1.0 - eq_integral[i] / cfg.min_mean);
    };

    const bool started = *std::max_element(q0.begin(), q0.end()) > eps;
    std::vector<double> rate(cols);
    for (std::size_t k = 0; k < K; ++k) {
        const auto row = path.q_row(k);
        for (std::size_t i = 0; i < cols; ++i) {
            if (row[i] <= eps)
                rate[i] = 0.0;
            else if (scalar)
                rate[i] = 1.0 / (C * row[i]);
            else
                rate[i] = class_rate(*idx, i, row, rmode);
        }
        path.t[k + 1] = static_cast<double>(k + 1) * h;
        bool all_empty = true;
        for (std::size_t i = 0; i < cols; ++i) {
            auto& ph = hist[i];
            ph[k + 1] = ph[k] + h * rate[i];
            const double P = ph[k + 1];
            // Phi is nondecreasing, so only a suffix of the s-grid has Fbar > 0.
            std::size_t m0 = 0;
            if (std::isfinite(zero_beyond))
                m0 = static_cast<std::size_t>(
                    std::upper_bound(ph.begin(), ph.begin() + static_cast<std::ptrdiff_t>(k + 2),
                                     P - zero_beyond) -
                    ph.begin());
            double sum = 0.0;
            for (std::size_t m = m0; m <= k + 1; ++m) {
                const double w = (m == 0 || m == k + 1) ? 0.5 : 1.0;
                sum += w * fbar(P - ph[m]);
            }
            const double qi =
                std::max(0.0, q0[i] * initial_survival(i, ph[k], P) + a * h * sum);
            path.q[(k + 1) * cols + i] = qi;
            path.phi[(k + 1) * cols + i] = P;
            all_empty = all_empty && qi <= eps;
        }
        if (started && all_empty && !path.drain_time)
            path.drain_time = path.t[k + 1];
    }
    return path;
}

struct FluidVerdict {
    enum class Kind { Stable, Unstable, Inconclusive };
    Kind kind = Kind::Inconclusive;
    double drain_time = 0.0; // Stable
    double slope = 0.0;      // trailing least-squares slope of the mean class mass
};

inline const char* to_string(FluidVerdict::Kind k) noexcept
{
    switch (k) {
    case FluidVerdict::Kind::Stable: return "Stable";
    case FluidVerdict::Kind::Unstable: return "Unstable";
    case FluidVerdict::Kind::Inconclusive: return "Inconclusive";
    }
    return "?";
}

/// Stable if the path drained; Unstable if the least-squares slope of the
/// mean class mass over the trailing `window` exceeds `threshold` (default
/// 1e-3 * lambda/M) and the final mass exceeds the initial one.
inline FluidVerdict classify_fluid(const FluidPath& path, double window,
                                   std::optional<double> threshold = std::nullopt)
{
    if (path.points() < 2)
        throw ConfigError("fluid path is empty");
    const double T = path.t.back();
    if (!(window > 0.0) || window > T + 1e-12)
        throw ConfigError("growth window must lie in (0, horizon]");
    FluidVerdict v;
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < path.points(); ++k)
        if (path.t[k] >= T - window - 1e-12) {
            xs.push_back(path.t[k]);
            ys.push_back(path.mean_mass(k));
        }
    if (xs.size() >= 2)
        v.slope = least_squares(xs, ys).slope;
    if (path.drain_time) {
        v.kind = FluidVerdict::Kind::Stable;
        v.drain_time = *path.drain_time;
        return v;
    }
    const double thr = threshold.value_or(1e-3 * path.class_arrival_rate);
    if (v.slope > thr && path.mean_mass(path.points() - 1) > path.mean_mass(0))
        v.kind = FluidVerdict::Kind::Unstable;
    return v;
}

/// Change of the final mean mass when the step is halved (epsilon held
/// fixed), relative to the peak mean mass of the finer path.
inline double refinement_change(FluidConfig cfg)
{
    const auto coarse = solve_fluid(cfg);
    cfg.step /= 2.0;
    if (cfg.epsilon == 0.0)
        cfg.epsilon = coarse.epsilon;
    const auto fine = solve_fluid(cfg);
    double peak = 0.0;
    for (std::size_t k = 0; k < fine.points(); ++k)
        peak = std::max(peak, fine.mean_mass(k));
    const double a = coarse.mean_mass(coarse.points() - 1);
    const double b = fine.mean_mass(fine.points() - 1);
    return std::abs(a - b) / std::max(peak, 1e-300);
}

/// Per-class rates phi_i(q(t_k)) along a vector path (0 where q_i <= epsilon).
inline std::vector<double> path_rates(const FluidPath& path, const ClassIndex& idx, RateMode mode)
{
    if (path.columns != idx.size())
        throw ConfigError("path_rates needs a vector fluid path");
    std::vector<double> out(path.q.size(), 0.0);
    for (std::size_t k = 0; k < path.points(); ++k) {
        const auto row = path.q_row(k);
        for (std::size_t i = 0; i < path.columns; ++i)
            out[k * path.columns + i] = row[i] > path.epsilon ? class_rate(idx, i, row, mode) : 0.0;
    }
    return out;
}

} // namespace redund
