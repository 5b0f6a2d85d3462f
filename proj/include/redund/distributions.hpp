#pragma once

// Job-size marginals, replica dependence models and the minimum-of-replicas
// statistics that drive every load and stability computation.

#include "redund/call_syntax.hpp"
#include "redund/error.hpp"
#include "redund/rng.hpp"
#include "redund/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace redund {

/// Shortest decimal text that round-trips to the same double.
inline std::string format_number(double x)
{
    if (std::isinf(x))
        return x > 0 ? "inf" : "-inf";
    if (std::isnan(x))
        return "nan";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, ptr);
}

enum class SizeKind { Deterministic, Exponential, Erlang, Bimodal, Weibull, ScaledBernoulli };

/// A marginal job-size distribution. Sizes are in units of work; servers run at
/// speed 1, so work and time units coincide.
class JobSizeModel {
public:
    JobSizeModel() : JobSizeModel(SizeKind::Exponential, 1.0, 0.0, 0.0, 0) {}

    static JobSizeModel deterministic(double value)
    {
        require_positive(value, "deterministic value");
        return {SizeKind::Deterministic, value, 0.0, 0.0, 0};
    }

    static JobSizeModel exponential(double mean)
    {
        require_positive(mean, "exponential mean");
        return {SizeKind::Exponential, mean, 0.0, 0.0, 0};
    }

    /// Sum of `k` exponential stages, each with mean `stage_mean`.
    static JobSizeModel erlang(int k, double stage_mean)
    {
        if (k < 1)
            throw ConfigError("erlang stage count must be >= 1");
        require_positive(stage_mean, "erlang stage mean");
        return {SizeKind::Erlang, stage_mean, 0.0, 0.0, k};
    }

    /// Value `lo` with probability `p_lo`, otherwise `hi`.
    static JobSizeModel bimodal(double lo, double hi, double p_lo)
    {
        require_positive(lo, "bimodal lo");
        require_positive(hi, "bimodal hi");
        if (!(hi >= lo))
            throw ConfigError("bimodal requires lo <= hi");
        if (!(p_lo > 0.0 && p_lo <= 1.0))
            throw ConfigError("bimodal p_lo must lie in (0, 1]");
        return {SizeKind::Bimodal, lo, hi, p_lo, 0};
    }

    static JobSizeModel weibull(double shape, double scale)
    {
        require_positive(shape, "weibull shape");
        require_positive(scale, "weibull scale");
        return {SizeKind::Weibull, shape, scale, 0.0, 0};
    }

    /// Size 0 with probability 1 - 1/K and size K with probability 1/K (mean 1).
    static JobSizeModel scaled_bernoulli(double K)
    {
        if (!(K >= 1.0) || !std::isfinite(K))
            throw ConfigError("scaled_bernoulli requires finite K >= 1");
        return {SizeKind::ScaledBernoulli, K, 0.0, 0.0, 0};
    }

    static JobSizeModel parse(std::string_view text);

    SizeKind kind() const noexcept { return kind_; }

    double mean() const noexcept
    {
        switch (kind_) {
        case SizeKind::Deterministic: return a_;
        case SizeKind::Exponential: return a_;
        case SizeKind::Erlang: return k_ * a_;
        case SizeKind::Bimodal: return c_ * a_ + (1.0 - c_) * b_;
        case SizeKind::Weibull: return b_ * std::tgamma(1.0 + 1.0 / a_);
        case SizeKind::ScaledBernoulli: return 1.0;
        }
        return 0.0;
    }

    double variance() const noexcept
    {
        switch (kind_) {
        case SizeKind::Deterministic: return 0.0;
        case SizeKind::Exponential: return a_ * a_;
        case SizeKind::Erlang: return k_ * a_ * a_;
        case SizeKind::Bimodal: return c_ * (1.0 - c_) * (b_ - a_) * (b_ - a_);
        case SizeKind::Weibull: {
            const double g1 = std::tgamma(1.0 + 1.0 / a_);
            return b_ * b_ * (std::tgamma(1.0 + 2.0 / a_) - g1 * g1);
        }
        case SizeKind::ScaledBernoulli: return a_ - 1.0;
        }
        return 0.0;
    }

    /// P(X > x).
    double survival(double x) const noexcept
    {
        if (x < 0.0)
            return 1.0;
        switch (kind_) {
        case SizeKind::Deterministic: return x < a_ ? 1.0 : 0.0;
        case SizeKind::Exponential: return std::exp(-x / a_);
        case SizeKind::Erlang: {
            const double y = x / a_;
            double term = std::exp(-y), sum = term;
            for (int n = 1; n < k_; ++n) {
                term *= y / n;
                sum += term;
            }
            return std::min(1.0, sum);
        }
        case SizeKind::Bimodal: return x < a_ ? 1.0 : (x < b_ ? 1.0 - c_ : 0.0);
        case SizeKind::Weibull: return std::exp(-std::pow(x / b_, a_));
        case SizeKind::ScaledBernoulli: return x < a_ ? 1.0 / a_ : 0.0;
        }
        return 0.0;
    }

    /// P(X <= x); right-continuous.
    double cdf(double x) const noexcept
    {
        if (x < 0.0)
            return 0.0;
        switch (kind_) {
        case SizeKind::Exponential: return -std::expm1(-x / a_);
        case SizeKind::Weibull: return -std::expm1(-std::pow(x / b_, a_));
        default: return 1.0 - survival(x);
        }
    }

    /// Generalized inverse inf{x : F(x) >= u} for u in (0, 1).
    double quantile(double u) const
    {
        switch (kind_) {
        case SizeKind::Deterministic: return a_;
        case SizeKind::Exponential: return -a_ * std::log1p(-u);
        case SizeKind::Erlang: return invert_survival(1.0 - u);
        case SizeKind::Bimodal: return u <= c_ ? a_ : b_;
        case SizeKind::Weibull: return b_ * std::pow(-std::log1p(-u), 1.0 / a_);
        case SizeKind::ScaledBernoulli: return u <= 1.0 - 1.0 / a_ ? 0.0 : a_;
        }
        return 0.0;
    }

    /// Same point as quantile(1 - p), accurate for small tail probability p.
    double survival_quantile(double p) const
    {
        switch (kind_) {
        case SizeKind::Exponential: return -a_ * std::log(p);
        case SizeKind::Weibull: return b_ * std::pow(-std::log(p), 1.0 / a_);
        case SizeKind::Erlang: return invert_survival(p);
        case SizeKind::Bimodal: return p >= 1.0 - c_ ? a_ : b_;
        case SizeKind::ScaledBernoulli: return p >= 1.0 / a_ ? 0.0 : a_;
        default: return quantile(1.0 - p);
        }
    }

    double sample(RandomStream& rng) const
    {
        switch (kind_) {
        case SizeKind::Deterministic: return a_;
        case SizeKind::Exponential: return rng.exponential(a_);
        case SizeKind::Erlang: {
            double s = 0.0;
            for (int i = 0; i < k_; ++i)
                s += rng.exponential(a_);
            return s;
        }
        case SizeKind::Bimodal: return rng.uniform() < c_ ? a_ : b_;
        case SizeKind::Weibull: return b_ * std::pow(-std::log(rng.uniform()), 1.0 / a_);
        case SizeKind::ScaledBernoulli: return rng.uniform() < 1.0 / a_ ? a_ : 0.0;
        }
        return 0.0;
    }

    /// A point beyond which survival() is below 1e-18 (exactly 0 for bounded support).
    double support_upper() const
    {
        switch (kind_) {
        case SizeKind::Deterministic: return a_;
        case SizeKind::Exponential: return a_ * tail_log;
        case SizeKind::Erlang: return invert_survival(1e-18);
        case SizeKind::Bimodal: return b_;
        case SizeKind::Weibull: return b_ * std::pow(tail_log, 1.0 / a_);
        case SizeKind::ScaledBernoulli: return a_;
        }
        return std::numeric_limits<double>::infinity();
    }

    /// Canonical call-syntax text; parse(spec()) reproduces the model.
    std::string spec() const
    {
        switch (kind_) {
        case SizeKind::Deterministic: return "deterministic(value=" + format_number(a_) + ")";
        case SizeKind::Exponential: return "exponential(mean=" + format_number(a_) + ")";
        case SizeKind::Erlang:
            return "erlang(k=" + std::to_string(k_) + ",stage_mean=" + format_number(a_) + ")";
        case SizeKind::Bimodal:
            return "bimodal(lo=" + format_number(a_) + ",hi=" + format_number(b_) +
                   ",p_lo=" + format_number(c_) + ")";
        case SizeKind::Weibull:
            return "weibull(shape=" + format_number(a_) + ",scale=" + format_number(b_) + ")";
        case SizeKind::ScaledBernoulli: return "scaled_bernoulli(k=" + format_number(a_) + ")";
        }
        return {};
    }

    bool operator==(const JobSizeModel&) const = default;

    // Raw parameters, meaning depends on kind(): see the factories.
    double first() const noexcept { return a_; }
    double second() const noexcept { return b_; }
    double third() const noexcept { return c_; }
    int stages() const noexcept { return k_; }

private:
    static constexpr double tail_log = 41.5; // exp(-41.5) < 1e-18

    JobSizeModel(SizeKind kind, double a, double b, double c, int k)
        : kind_(kind), a_(a), b_(b), c_(c), k_(k)
    {
    }

    static void require_positive(double v, const char* what)
    {
        if (!(v > 0.0) || !std::isfinite(v))
            throw ConfigError(std::string(what) + " must be positive and finite");
    }

    // Erlang only: x with survival(x) = p, by bracketing and bisection.
    double invert_survival(double p) const
    {
        if (p >= 1.0)
            return 0.0;
        double lo = 0.0, hi = mean();
        while (survival(hi) > p)
            hi *= 2.0;
        for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
            const double mid = 0.5 * (lo + hi);
            (survival(mid) > p ? lo : hi) = mid;
        }
        return hi;
    }

    SizeKind kind_;
    double a_, b_, c_;
    int k_;
};

inline double sample(const JobSizeModel& model, RandomStream& rng) { return model.sample(rng); }

struct NamedModel {
    std::string name;
    JobSizeModel model;
};

/// The seven job-size distributions with mean 2 used throughout the
/// numerical studies. Bimodal-2's variance follows from its support
/// (1 w.p. 0.99, 101 w.p. 0.01), which gives 99.
inline std::vector<NamedModel> reference_models()
{
    return {
        {"Deterministic", JobSizeModel::deterministic(2.0)},
        {"Erlang2", JobSizeModel::erlang(2, 1.0)},
        {"Exponential", JobSizeModel::exponential(2.0)},
        {"Bimodal-1", JobSizeModel::bimodal(1.0, 11.0, 0.9)},
        {"Weibull-1", JobSizeModel::weibull(0.5, 1.0)},
        {"Weibull-2", JobSizeModel::weibull(1.0 / 3.0, 1.0 / 3.0)},
        {"Bimodal-2", JobSizeModel::bimodal(1.0, 101.0, 0.99)},
    };
}

inline JobSizeModel JobSizeModel::parse(std::string_view text)
{
    const auto call = parse_call(text);
    const auto& n = call.name;
    for (const auto& preset : reference_models())
        if (n == to_lower(preset.name) && call.args.empty())
            return preset.model;
    if (n == "deterministic" || n == "point") {
        call.expect_only({"value"});
        return deterministic(call.number("value"));
    }
    if (n == "exponential" || n == "exp") {
        call.expect_only({"mean"});
        return exponential(call.number("mean"));
    }
    if (n == "erlang") {
        call.expect_only({"k", "stage_mean"});
        const double k = call.number("k");
        if (k != std::floor(k) || k < 1 || k > 1000)
            throw ConfigError("erlang k must be an integer in [1, 1000]");
        return erlang(static_cast<int>(k), call.number("stage_mean"));
    }
    if (n == "bimodal") {
        call.expect_only({"lo", "hi", "p_lo"});
        return bimodal(call.number("lo"), call.number("hi"), call.number("p_lo"));
    }
    if (n == "weibull") {
        call.expect_only({"shape", "scale"});
        return weibull(call.number("shape"), call.number("scale"));
    }
    if (n == "scaled_bernoulli" || n == "bernoulli") {
        call.expect_only({"k"});
        return scaled_bernoulli(call.number("k"));
    }
    throw ConfigError("unknown distribution '" + n + "'");
}

enum class DependenceKind { Identical, IID, Clayton };

/// Joint structure of a job's d replica sizes. Clayton is the exchangeable
/// Archimedean copula with generator (t^-theta - 1)/theta: theta -> 0 gives
/// independence, theta -> infinity comonotonicity.
class DependenceModel {
public:
    DependenceModel() = default;

    static DependenceModel identical() { return DependenceModel(DependenceKind::Identical, 0.0); }
    static DependenceModel iid() { return DependenceModel(DependenceKind::IID, 0.0); }
    static DependenceModel clayton(double theta)
    {
        if (!(theta >= 0.0))
            throw ConfigError("clayton theta must be >= 0");
        return DependenceModel(DependenceKind::Clayton, theta);
    }

    static DependenceModel parse(std::string_view text)
    {
        const auto call = parse_call(text);
        if (call.name == "identical") {
            call.expect_only({});
            return identical();
        }
        if (call.name == "iid" || call.name == "independent") {
            call.expect_only({});
            return iid();
        }
        if (call.name == "clayton") {
            call.expect_only({"theta"});
            const auto raw = call.find("theta");
            if (raw && to_lower(trim(*raw)) == "inf")
                return clayton(std::numeric_limits<double>::infinity());
            return clayton(call.number("theta"));
        }
        throw ConfigError("unknown dependence model '" + call.name + "'");
    }

    DependenceKind kind() const noexcept { return kind_; }
    double theta() const noexcept { return theta_; }

    /// Kind after resolving the Clayton endpoints (theta 0 / infinity).
    DependenceKind effective_kind() const noexcept
    {
        if (kind_ == DependenceKind::Clayton) {
            if (theta_ == 0.0)
                return DependenceKind::IID;
            if (std::isinf(theta_))
                return DependenceKind::Identical;
        }
        return kind_;
    }

    std::string spec() const
    {
        switch (kind_) {
        case DependenceKind::Identical: return "identical";
        case DependenceKind::IID: return "iid";
        case DependenceKind::Clayton: return "clayton(theta=" + format_number(theta_) + ")";
        }
        return {};
    }

    bool operator==(const DependenceModel&) const = default;

private:
    DependenceModel(DependenceKind kind, double theta) : kind_(kind), theta_(theta) {}

    DependenceKind kind_ = DependenceKind::IID;
    double theta_ = 0.0;
};

/// The d sizes of one job's replicas.
struct ReplicaSizes {
    std::vector<double> sizes;
    double min_size = 0.0;

    ReplicaSizes() = default;
    explicit ReplicaSizes(std::vector<double> s) : sizes(std::move(s))
    {
        min_size = sizes.empty() ? 0.0 : *std::min_element(sizes.begin(), sizes.end());
    }

    std::size_t size() const noexcept { return sizes.size(); }
    double max_size() const noexcept
    {
        return sizes.empty() ? 0.0 : *std::max_element(sizes.begin(), sizes.end());
    }
};

namespace detail {

// Log of a Gamma(shape, 1) draw; stays finite for very small shapes.
inline double log_gamma_variate(double shape, RandomStream& rng)
{
    if (shape >= 1.0)
        return std::log(rng.standard_gamma(shape));
    return std::log(rng.standard_gamma(shape + 1.0)) + std::log(rng.uniform()) / shape;
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) noexcept
{
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

} // namespace detail

/// Draws the d replica sizes of one job.
inline ReplicaSizes sample_replicas(const DependenceModel& dep, const JobSizeModel& model,
                                    std::size_t d, RandomStream& rng)
{
    if (d < 1)
        throw ConfigError("replica count d must be >= 1");
    std::vector<double> sizes(d);
    switch (dep.effective_kind()) {
    case DependenceKind::Identical:
        std::fill(sizes.begin(), sizes.end(), model.sample(rng));
        break;
    case DependenceKind::IID:
        for (auto& s : sizes)
            s = model.sample(rng);
        break;
    case DependenceKind::Clayton: {
        // Marshall-Olkin frailty construction: U_i = (1 + E_i / V)^(-1/theta)
        // with V ~ Gamma(1/theta), E_i ~ Exp(1). Worked in logs.
        const double theta = dep.theta();
        const double log_v = detail::log_gamma_variate(1.0 / theta, rng);
        for (auto& s : sizes) {
            const double log_e = std::log(rng.exponential(1.0));
            const double log_u = -detail::softplus(log_e - log_v) / theta;
            s = model.survival_quantile(-std::expm1(log_u));
        }
        break;
    }
    }
    return ReplicaSizes(std::move(sizes));
}

/// P(min{X_1..X_d} > x) under the given dependence.
inline double min_survival(const DependenceModel& dep, const JobSizeModel& model, std::size_t d,
                           double x)
{
    const double sf = model.survival(x);
    switch (dep.effective_kind()) {
    case DependenceKind::Identical: return sf;
    case DependenceKind::IID: return std::pow(sf, static_cast<double>(d));
    case DependenceKind::Clayton: {
        if (sf <= 0.0 || sf >= 1.0 || d == 1)
            return sf;
        // P(all U_i > u) = sum_k (-1)^k C(d,k) (1 + k t)^(-1/theta), t = u^-theta - 1.
        // Alternating sum: relative precision degrades once the result
        // falls below ~1e-13.
        const double theta = dep.theta();
        const double t = std::expm1(-theta * std::log1p(-sf));
        double sum = 0.0, binom = 1.0;
        for (std::size_t k = 0; k <= d; ++k) {
            const double term = binom * std::exp(-std::log1p(static_cast<double>(k) * t) / theta);
            sum += (k % 2 == 0) ? term : -term;
            binom = binom * static_cast<double>(d - k) / static_cast<double>(k + 1);
        }
        return std::clamp(sum, 0.0, sf);
    }
    }
    return sf;
}

struct Analytic {};
struct MonteCarlo {
    std::size_t samples = 1'000'000;
    std::uint64_t seed = 1;
};
using EminMethod = std::variant<Analytic, MonteCarlo>;

struct MinEstimate {
    double value = 0.0;
    double std_error = 0.0; // 0 for the analytic path
    bool analytic = true;
};

/// E[min{X_1..X_d}]. The analytic path covers identical replicas, d = 1, and
/// i.i.d. replicas of every marginal with a closed-form tail integral.
inline MinEstimate expected_min(const DependenceModel& dep, const JobSizeModel& model,
                                std::size_t d, const EminMethod& method = Analytic{})
{
    if (d < 1)
        throw ConfigError("replica count d must be >= 1");
    if (const auto* mc = std::get_if<MonteCarlo>(&method)) {
        if (mc->samples < 2)
            throw ConfigError("monte carlo needs at least two samples");
        RandomStream rng(mc->seed);
        RunningStats s;
        for (std::size_t i = 0; i < mc->samples; ++i)
            s.add(sample_replicas(dep, model, d, rng).min_size);
        return {s.mean(), s.std_error(), false};
    }
    const auto kind = dep.effective_kind();
    if (d == 1 || kind == DependenceKind::Identical)
        return {model.mean(), 0.0, true};
    if (kind == DependenceKind::IID) {
        const double dd = static_cast<double>(d);
        switch (model.kind()) {
        case SizeKind::Deterministic: return {model.first(), 0.0, true};
        case SizeKind::Exponential: return {model.first() / dd, 0.0, true};
        case SizeKind::Weibull:
            // min of d i.i.d. Weibull(k, s) is Weibull(k, s / d^(1/k)).
            return {model.mean() / std::pow(dd, 1.0 / model.first()), 0.0, true};
        case SizeKind::Bimodal: {
            const double all_hi = std::pow(1.0 - model.third(), dd);
            return {model.first() * (1.0 - all_hi) + model.second() * all_hi, 0.0, true};
        }
        case SizeKind::ScaledBernoulli:
            return {model.first() * std::pow(1.0 / model.first(), dd), 0.0, true};
        case SizeKind::Erlang: break;
        }
    }
    throw UnsupportedCombination("no closed form for E[min] with " + dep.spec() + ", " +
                                 model.spec() + ", d=" + std::to_string(d) +
                                 "; use monte carlo");
}

enum class Aging { NBU, NWU, ExponentialBoundary, Indeterminate };

inline const char* to_string(Aging a) noexcept
{
    switch (a) {
    case Aging::NBU: return "NBU";
    case Aging::NWU: return "NWU";
    case Aging::ExponentialBoundary: return "exponential-boundary";
    case Aging::Indeterminate: return "indeterminate";
    }
    return "?";
}

/// Compares survival(t1 + t2) with survival(t1) * survival(t2) on every grid pair.
inline Aging classify_aging(const JobSizeModel& model,
                            std::span<const std::pair<double, double>> grid, double tol = 1e-12)
{
    if (grid.empty())
        throw ConfigError("aging classification needs a nonempty grid");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (auto [t1, t2] : grid) {
        if (t1 < 0.0 || t2 < 0.0)
            throw ConfigError("aging grid points must be nonnegative");
        const double diff = model.survival(t1 + t2) - model.survival(t1) * model.survival(t2);
        lo = std::min(lo, diff);
        hi = std::max(hi, diff);
    }
    if (lo >= -tol && hi <= tol)
        return Aging::ExponentialBoundary;
    if (hi <= tol)
        return Aging::NBU;
    if (lo >= -tol)
        return Aging::NWU;
    return Aging::Indeterminate;
}

/// All pairs from 16 points spread over (0, 2 * max(mean, 90th percentile)].
inline std::vector<std::pair<double, double>> default_aging_grid(const JobSizeModel& model)
{
    const double top = 2.0 * std::max(model.mean(), model.quantile(0.9));
    constexpr int points = 16;
    std::vector<double> ts;
    for (int i = 1; i <= points; ++i)
        ts.push_back(top * i / points);
    std::vector<std::pair<double, double>> grid;
    for (double a : ts)
        for (double b : ts)
            grid.emplace_back(a, b);
    return grid;
}

inline Aging classify_aging(const JobSizeModel& model)
{
    const auto grid = default_aging_grid(model);
    return classify_aging(model, grid);
}

} // namespace redund
