#pragma once

// The bound systems rewritten as C(N,d) interacting virtual PS queues, one per
// d-subset of servers.

#include "redund/engine.hpp"
#include "redund/error.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <unordered_map>
#include <vector>

namespace redund {

/// C(n, k) as a double (exact well past any admissible class count).
inline double binomial(std::size_t n, std::size_t k)
{
    if (k > n)
        return 0.0;
    k = std::min(k, n - k);
    double r = 1.0;
    for (std::size_t i = 1; i <= k; ++i)
        r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    return std::round(r);
}

class ClassIndex {
public:
    std::size_t N = 0, d = 0;
    // server_sets[i]: the sorted 0-based servers of class i, lexicographic in i.
    std::vector<std::vector<std::uint32_t>> server_sets;
    // classes_of_server[s]: ascending classes whose set contains s.
    std::vector<std::vector<std::uint32_t>> classes_of_server;

    std::size_t size() const noexcept { return server_sets.size(); }

    /// Classes sharing the j-th server of class i (includes i itself).
    std::span<const std::uint32_t> sharing_set(std::size_t i, std::size_t j) const
    {
        return classes_of_server[server_sets[i][j]];
    }

    std::uint32_t class_of(std::span<const std::uint32_t> servers) const
    {
        std::uint64_t mask = 0;
        for (auto s : servers)
            mask |= std::uint64_t{1} << s;
        auto it = by_mask_.find(mask);
        if (it == by_mask_.end() || servers.size() != d)
            throw ConsistencyError("server set does not name a class");
        return it->second;
    }

private:
    friend ClassIndex build_class_index(std::size_t, std::size_t, std::size_t);
    std::unordered_map<std::uint64_t, std::uint32_t> by_mask_;
};

inline ClassIndex build_class_index(std::size_t N, std::size_t d, std::size_t max_classes = 100'000)
{
    if (d < 1 || d > N)
        throw ConfigError("class index needs 1 <= d <= N");
    if (N > 64)
        throw ConfigError("class index supports at most 64 servers");
    if (binomial(N, d) > static_cast<double>(max_classes))
        throw ConfigError("C(" + std::to_string(N) + "," + std::to_string(d) +
                          ") exceeds the class cap of " + std::to_string(max_classes));
    ClassIndex idx;
    idx.N = N;
    idx.d = d;
    idx.classes_of_server.resize(N);
    std::vector<std::uint32_t> comb(d);
    for (std::size_t j = 0; j < d; ++j)
        comb[j] = static_cast<std::uint32_t>(j);
    for (;;) {
        const auto id = static_cast<std::uint32_t>(idx.server_sets.size());
        std::uint64_t mask = 0;
        for (auto s : comb) {
            idx.classes_of_server[s].push_back(id);
            mask |= std::uint64_t{1} << s;
        }
        idx.by_mask_.emplace(mask, id);
        idx.server_sets.push_back(comb);
        // Next combination in lexicographic order.
        std::size_t j = d;
        while (j > 0 && comb[j - 1] == N - d + j - 1)
            --j;
        if (j == 0)
            break;
        ++comb[j - 1];
        for (std::size_t k = j; k < d; ++k)
            comb[k] = comb[k - 1] + 1;
    }
    return idx;
}

enum class RateMode { Min, Max };

/// Per-job service rate of virtual queue i: 1 over the min (or max) across the
/// class's servers of the total mass of classes sharing that server; 0 when
/// the queue itself is empty.
inline double class_rate(const ClassIndex& idx, std::size_t i, std::span<const double> Q,
                         RateMode mode)
{
    if (!(Q[i] > 0.0))
        return 0.0;
    double pick = mode == RateMode::Min ? std::numeric_limits<double>::infinity() : 0.0;
    for (std::size_t j = 0; j < idx.d; ++j) {
        double sum = 0.0;
        for (auto k : idx.sharing_set(i, j))
            sum += Q[k];
        pick = mode == RateMode::Min ? std::min(pick, sum) : std::max(pick, sum);
    }
    return 1.0 / pick;
}

/// Virtual-queue kernel: per-class virtual clocks over jobs of size X_min,
/// with server sums kept incrementally.
class ClassClockCore {
public:
    explicit ClassClockCore(const SystemConfig& cfg)
        : idx_(build_class_index(cfg.N, cfg.d)), classes_(idx_.size()), server_sum_(cfg.N, 0)
    {
        if (cfg.variant == Variant::LowerBound)
            mode_ = RateMode::Min;
        else if (cfg.variant == Variant::UpperBound)
            mode_ = RateMode::Max;
        else
            throw ConfigError("virtual queues represent only the lower and upper bound systems");
    }

    void admit(const Arrival& a)
    {
        const auto i = idx_.class_of(a.servers);
        auto& c = classes_[i];
        c.heap.push({c.vtime + a.sizes.min_size, a.id});
        ++c.count;
        for (auto s : idx_.server_sets[i])
            ++server_sum_[s];
    }

    std::optional<Candidate> next_completion() const
    {
        std::optional<Candidate> best;
        for (std::size_t i = 0; i < classes_.size(); ++i) {
            const auto& c = classes_[i];
            if (c.count == 0)
                continue;
            const auto& top = c.heap.top();
            const double dt = std::max(0.0, top.tag - c.vtime) / rate(i);
            if (!best || dt < best->dt || (dt == best->dt && top.job < best->job))
                best = Candidate{dt, top.job, i, 0};
        }
        return best;
    }

    void advance(double dt)
    {
        // Rates depend on the state before the update, so compute them first.
        rates_.resize(classes_.size());
        for (std::size_t i = 0; i < classes_.size(); ++i)
            rates_[i] = classes_[i].count ? rate(i) : 0.0;
        for (std::size_t i = 0; i < classes_.size(); ++i)
            classes_[i].vtime += dt * rates_[i];
    }

    CompletionResult complete(const Candidate& cand)
    {
        auto& c = classes_[cand.slot];
        c.heap.pop();
        if (--c.count == 0)
            c.vtime = 0.0;
        for (auto s : idx_.server_sets[cand.slot])
            --server_sum_[s];
        return {cand.job, 0, true, static_cast<std::uint32_t>(idx_.d - 1), false};
    }

    std::span<const std::uint32_t> queue_lengths() const { return server_sum_; }

    std::vector<JobResidual> residuals() const
    {
        std::vector<JobResidual> out;
        for (const auto& c : classes_) {
            auto heap = c.heap;
            for (; !heap.empty(); heap.pop())
                out.push_back({heap.top().job, heap.top().tag - c.vtime});
        }
        std::sort(out.begin(), out.end(),
                  [](const JobResidual& a, const JobResidual& b) { return a.job < b.job; });
        return out;
    }

    void check() const
    {
        for (std::size_t s = 0; s < server_sum_.size(); ++s) {
            std::uint32_t sum = 0;
            for (auto k : idx_.classes_of_server[s])
                sum += classes_[k].count;
            if (sum != server_sum_[s])
                throw ConsistencyError("server sum out of sync at server " + std::to_string(s));
        }
    }

    const ClassIndex& index() const { return idx_; }
    std::vector<std::uint32_t> class_counts() const
    {
        std::vector<std::uint32_t> out;
        for (const auto& c : classes_)
            out.push_back(c.count);
        return out;
    }

private:
    struct Entry {
        double tag;
        std::uint64_t job;
        bool operator>(const Entry& o) const { return tag != o.tag ? tag > o.tag : job > o.job; }
    };
    struct VirtualQueue {
        double vtime = 0.0;
        std::uint32_t count = 0;
        std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    };

    // Server sums equal the sharing-set sums of the class-rate definition.
    double rate(std::size_t i) const
    {
        std::uint32_t pick = mode_ == RateMode::Min ? std::numeric_limits<std::uint32_t>::max() : 0;
        for (auto s : idx_.server_sets[i])
            pick = mode_ == RateMode::Min ? std::min(pick, server_sum_[s])
                                          : std::max(pick, server_sum_[s]);
        return 1.0 / pick;
    }

    ClassIndex idx_;
    RateMode mode_ = RateMode::Min;
    std::vector<VirtualQueue> classes_;
    std::vector<std::uint32_t> server_sum_;
    std::vector<double> rates_;
};

/// Simulates the virtual-queue representation of cfg.variant (LowerBound or
/// UpperBound) on the same input stream as run(cfg).
inline SimulationRecord run_virtual(const SystemConfig& cfg)
{
    cfg.validate();
    Simulator<ClassClockCore> sim(cfg);
    SimulatorBase* sims[] = {&sim};
    return std::move(drive(cfg, sims).front());
}

struct VirtualComparison {
    SimulationRecord server;  // server-level bound system (replica scan kernel)
    SimulationRecord virtual_queues;
};

/// Runs the server-level bound system and its virtual-queue form in lockstep,
/// checking at every arrival epoch that the server queue lengths rebuilt from
/// the class counts match the server-level ones.
inline VirtualComparison run_virtual_coupled(SystemConfig cfg)
{
    cfg.validate();
    cfg.kernel = Kernel::Scan;
    Simulator<ScanCore> server(cfg);
    Simulator<ClassClockCore> virt(cfg);
    SimulatorBase* sims[] = {&server, &virt};
    auto hook = [](std::span<SimulatorBase* const> s) {
        const auto a = s[0]->queue_lengths();
        const auto b = s[1]->queue_lengths();
        if (!std::equal(a.begin(), a.end(), b.begin(), b.end()))
            throw ConsistencyError("virtual-queue server sums differ from server-level queues");
    };
    auto recs = drive(cfg, sims, hook);
    return {std::move(recs[0]), std::move(recs[1])};
}

struct TraceDiff {
    bool identical = true;
    std::size_t first_mismatch = 0;
    double max_time_gap = 0.0;
};

/// Compares two event traces event by event (kind, job id, queue vector) with
/// times equal to within `tol` (relative to max(1, |t|)).
inline TraceDiff compare_traces(const SimulationRecord& a, const SimulationRecord& b,
                                double tol = 1e-9)
{
    TraceDiff diff;
    const std::size_t n = std::min(a.trace.size(), b.trace.size());
    const std::size_t N = a.N;
    for (std::size_t e = 0; e < n; ++e) {
        const auto& x = a.trace[e];
        const auto& y = b.trace[e];
        const double gap = std::abs(x.time - y.time);
        diff.max_time_gap = std::max(diff.max_time_gap, gap);
        const bool same_queues = std::equal(
            a.trace_queues.begin() + static_cast<std::ptrdiff_t>(e * N),
            a.trace_queues.begin() + static_cast<std::ptrdiff_t>((e + 1) * N),
            b.trace_queues.begin() + static_cast<std::ptrdiff_t>(e * N));
        if (x.kind != y.kind || x.job != y.job || !same_queues ||
            gap > tol * std::max(1.0, std::abs(x.time))) {
            diff.identical = false;
            diff.first_mismatch = e;
            return diff;
        }
    }
    if (a.trace.size() != b.trace.size()) {
        diff.identical = false;
        diff.first_mismatch = n;
    }
    return diff;
}

} // namespace redund
