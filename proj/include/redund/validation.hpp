#pragma once

// Quick coupling and equivalence checks behind `redund validate`.

#include "redund/distributions.hpp"
#include "redund/engine.hpp"
#include "redund/fluid.hpp"
#include "redund/virtual_queues.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace redund {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline SystemConfig small_config(std::size_t N, std::size_t d, double lambda, JobSizeModel m,
                                 DependenceModel dep, std::uint64_t arrivals, std::uint64_t seed)
{
    SystemConfig c;
    c.N = N;
    c.d = d;
    c.lambda = lambda;
    c.model = m;
    c.dep = dep;
    c.horizon = Horizon::arrivals_count(arrivals);
    c.seed = seed;
    c.trajectory_rows = 2;
    return c;
}

inline double max_latency_gap(const SimulationRecord& a, const SimulationRecord& b)
{
    if (a.latencies.size() != b.latencies.size())
        return INFINITY;
    double gap = 0.0;
    for (std::size_t i = 0; i < a.latencies.size(); ++i) {
        if (a.latencies[i].job_id != b.latencies[i].job_id)
            return INFINITY;
        gap = std::max(gap, std::abs(a.latencies[i].latency - b.latencies[i].latency));
    }
    return gap;
}

template <class F>
CheckResult guarded(std::string name, F&& body)
{
    CheckResult r{std::move(name), false, {}};
    try {
        r.detail = body();
        r.passed = r.detail.empty();
    } catch (const std::exception& e) {
        r.detail = e.what();
    }
    return r;
}

} // namespace detail

/// Runs the coupling/equivalence property suite at `arrivals` jobs per run.
inline std::vector<CheckResult> run_validation_suite(std::uint64_t arrivals = 5000,
                                                     std::uint64_t seed = 1)
{
    using detail::small_config;
    std::vector<CheckResult> out;
    const std::vector<Variant> bounds = {Variant::LowerBound, Variant::Original,
                                         Variant::UpperBound};
    const std::vector<Variant> all = {Variant::LowerBound, Variant::Original, Variant::UpperBound,
                                      Variant::FullyServed};
    auto coupled = [](const SystemConfig& base, const std::vector<Variant>& vs) {
        std::vector<SystemConfig> cfgs;
        for (auto v : vs) {
            auto c = base;
            c.variant = v;
            cfgs.push_back(c);
        }
        return cfgs;
    };

    out.push_back(detail::guarded("bound bracketing", [&]() -> std::string {
        for (auto dep : {DependenceModel::identical(), DependenceModel::iid()})
            for (std::size_t d : {2u, 3u})
                for (const auto& nm : reference_models()) {
                    const auto probe = expected_min(dep, nm.model, d, MonteCarlo{100'000, seed});
                    const double lambda = 0.7 * 4.0 / (static_cast<double>(d) * probe.value);
                    auto base = small_config(4, d, lambda, nm.model, dep, arrivals, seed);
                    const auto cfgs = coupled(base, bounds);
                    const auto recs = run_coupled(cfgs, {true, 1e-9});
                    if (latency_order_violations(recs[0], recs[1]) +
                            latency_order_violations(recs[1], recs[2]) >
                        0)
                        return "latency ordering violated for " + nm.name + " d=" +
                               std::to_string(d) + " " + dep.spec();
                }
        return {};
    }));

    out.push_back(detail::guarded("degenerate coincidence", [&]() -> std::string {
        for (std::size_t d : {1u, 4u})
            for (const auto& nm : reference_models()) {
                auto base = small_config(4, d, 0.3, nm.model, DependenceModel::identical(),
                                         arrivals, seed);
                const auto recs = run_coupled(coupled(base, all));
                for (std::size_t i = 1; i < recs.size(); ++i)
                    if (!(detail::max_latency_gap(recs[0], recs[i]) <= 1e-9))
                        return "variants differ for " + nm.name + " d=" + std::to_string(d);
            }
        return {};
    }));

    out.push_back(detail::guarded("virtual queue equivalence", [&]() -> std::string {
        for (std::size_t N = 3; N <= 5; ++N)
            for (std::size_t d = 2; d <= 3; ++d)
                for (auto v : {Variant::LowerBound, Variant::UpperBound}) {
                    auto c = small_config(N, d, 0.5 * static_cast<double>(N) / static_cast<double>(d),
                                          JobSizeModel::bimodal(1, 11, 0.9), DependenceModel::iid(),
                                          std::min<std::uint64_t>(arrivals, 2000), seed);
                    c.variant = v;
                    c.record_trace = true;
                    const auto cmp = run_virtual_coupled(c);
                    const auto diff = compare_traces(cmp.server, cmp.virtual_queues, 1e-9);
                    if (!diff.identical)
                        return "event sequences differ for N=" + std::to_string(N) +
                               " d=" + std::to_string(d) + " " + to_string(v);
                }
        return {};
    }));

    out.push_back(detail::guarded("fluid equal masses", [&]() -> std::string {
        for (const auto& m : {JobSizeModel::exponential(2), JobSizeModel::deterministic(2),
                              JobSizeModel::weibull(0.5, 1)}) {
            auto c = fluid_config(4, 2, 1.0, m, DependenceModel::iid());
            c.step = 0.1;
            c.horizon = 20;
            c.q0 = {2.0};
            const auto scalar = solve_fluid(c);
            c.q0.assign(c.classes(), 2.0);
            c.mode = FluidMode::Min;
            const auto vmin = solve_fluid(c);
            c.mode = FluidMode::Max;
            const auto vmax = solve_fluid(c);
            for (std::size_t k = 0; k < scalar.points(); ++k)
                for (std::size_t i = 0; i < vmin.columns; ++i)
                    if (std::abs(vmin.q_at(k, i) - scalar.q_at(k, 0)) > 1e-8 ||
                        std::abs(vmax.q_at(k, i) - vmin.q_at(k, i)) > 1e-8)
                        return "vector fluid departs from scalar for " + m.spec();
        }
        return {};
    }));
    return out;
}

} // namespace redund
