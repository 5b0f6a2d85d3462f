#pragma once

#include "redund/error.hpp"

#include <cmath>
#include <cstddef>
#include <span>

namespace redund {

inline constexpr double z95 = 1.959963984540054;

/// Streaming mean/variance (Welford).
class RunningStats {
public:
    void add(double x) noexcept
    {
        ++n_;
        const double delta = x - mean_;
        mean_ += delta / static_cast<double>(n_);
        m2_ += delta * (x - mean_);
    }

    std::size_t count() const noexcept { return n_; }
    double mean() const noexcept { return mean_; }
    double variance() const noexcept { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
    double stddev() const noexcept { return std::sqrt(variance()); }
    double std_error() const noexcept
    {
        return n_ > 0 ? stddev() / std::sqrt(static_cast<double>(n_)) : 0.0;
    }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

struct Interval {
    double mean = 0.0;
    double half_width = 0.0;

    double lo() const noexcept { return mean - half_width; }
    double hi() const noexcept { return mean + half_width; }
    bool contains(double x) const noexcept { return x >= lo() && x <= hi(); }
};

/// Normal-approximation 95% interval over independent replication values.
inline Interval replication_interval(std::span<const double> values)
{
    if (values.size() < 2)
        throw ConfigError("a confidence interval needs at least two replications");
    RunningStats s;
    for (double v : values)
        s.add(v);
    return {s.mean(), z95 * s.std_error()};
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
};

/// Ordinary least squares of y on x.
inline LinearFit least_squares(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size() || x.size() < 2)
        throw ConfigError("least squares needs two or more paired points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(y.size());
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0.0)
        return {0.0, my};
    const double slope = sxy / sxx;
    return {slope, my - slope * mx};
}

} // namespace redund
