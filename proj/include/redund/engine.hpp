#pragma once

// Event-driven simulation of N processor-sharing servers with redundancy-d
// cancel-on-completion dispatch, and the coupled bound variants.

#include "redund/distributions.hpp"
#include "redund/error.hpp"
#include "redund/rng.hpp"
#include "redund/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace redund {

enum class Variant { Original, LowerBound, UpperBound, FullyServed };

inline const char* to_string(Variant v) noexcept
{
    switch (v) {
    case Variant::Original: return "original";
    case Variant::LowerBound: return "lower";
    case Variant::UpperBound: return "upper";
    case Variant::FullyServed: return "fully_served";
    }
    return "?";
}

inline Variant parse_variant(std::string_view text)
{
    const auto s = to_lower(trim(text));
    if (s == "original")
        return Variant::Original;
    if (s == "lower" || s == "lowerbound" || s == "lower_bound")
        return Variant::LowerBound;
    if (s == "upper" || s == "upperbound" || s == "upper_bound")
        return Variant::UpperBound;
    if (s == "fully_served" || s == "fullyserved" || s == "fully-served")
        return Variant::FullyServed;
    throw ConfigError("unknown variant '" + std::string(text) + "'");
}

struct Horizon {
    enum class Kind { Arrivals, Time };
    Kind kind = Kind::Arrivals;
    std::uint64_t arrivals = 100'000;
    double time = 0.0;

    static Horizon arrivals_count(std::uint64_t n) { return {Kind::Arrivals, n, 0.0}; }
    static Horizon time_limit(double T) { return {Kind::Time, 0, T}; }
};

/// Which completion kernel drives the run. Automatic uses per-server virtual
/// clocks for Original/FullyServed and the replica scan for the bound variants.
enum class Kernel { Automatic, Scan };

struct SystemConfig {
    std::size_t N = 1;
    std::size_t d = 1;
    double lambda = 0.5;
    JobSizeModel model;
    DependenceModel dep;
    Variant variant = Variant::Original;
    Horizon horizon;
    std::optional<std::uint64_t> warmup; // default: 10% of the arrivals
    std::uint64_t seed = 1;
    // Arrivals horizon: keep the arrival stream running past n until every
    // measured job has left (at most n extra arrivals).
    bool drain = true;
    std::size_t trajectory_rows = 4096;
    bool record_trace = false;
    bool check_invariants = false;
    Kernel kernel = Kernel::Automatic;

    void validate() const
    {
        if (N < 1)
            throw ConfigError("N must be >= 1");
        if (d < 1 || d > N)
            throw ConfigError("d must satisfy 1 <= d <= N");
        if (!(lambda > 0.0) || !std::isfinite(lambda))
            throw ConfigError("lambda must be positive and finite");
        if (horizon.kind == Horizon::Kind::Arrivals) {
            if (horizon.arrivals == 0)
                throw ConfigError("arrival horizon must be positive");
        } else if (!(horizon.time > 0.0) || !std::isfinite(horizon.time)) {
            throw ConfigError("time horizon must be positive and finite");
        }
        if (warmup && horizon.kind == Horizon::Kind::Arrivals && *warmup >= horizon.arrivals)
            throw ConfigError("warmup must be smaller than the arrival horizon");
        if (trajectory_rows < 2)
            throw ConfigError("trajectory_rows must be >= 2");
    }

    /// Number of initial jobs whose latencies are discarded.
    std::uint64_t warmup_jobs() const
    {
        if (warmup)
            return *warmup;
        if (horizon.kind == Horizon::Kind::Arrivals)
            return horizon.arrivals / 10;
        return static_cast<std::uint64_t>(0.1 * lambda * horizon.time);
    }

    /// One past the last measured job id.
    std::uint64_t measured_end() const
    {
        return horizon.kind == Horizon::Kind::Arrivals ? horizon.arrivals
                                                       : std::numeric_limits<std::uint64_t>::max();
    }
};

struct Arrival {
    std::uint64_t id = 0;
    double time = 0.0;
    std::vector<std::uint32_t> servers; // ascending, distinct
    ReplicaSizes sizes;                 // sizes.sizes[r] belongs to servers[r]
};

/// The exogenous input of a run: Poisson arrival times, uniform d-subsets and
/// replica sizes, drawn in a fixed order from one seeded stream so that every
/// variant (and the virtual-queue representation) sees identical input.
class ArrivalStream {
public:
    explicit ArrivalStream(const SystemConfig& cfg)
        : rng_(cfg.seed), N_(cfg.N), d_(cfg.d), lambda_(cfg.lambda), model_(cfg.model),
          dep_(cfg.dep), perm_(cfg.N)
    {
        for (std::size_t i = 0; i < N_; ++i)
            perm_[i] = static_cast<std::uint32_t>(i);
    }

    Arrival next()
    {
        Arrival a;
        a.id = next_id_++;
        clock_ += rng_.exponential(1.0 / lambda_);
        a.time = clock_;
        // Partial Fisher-Yates over a persistent permutation.
        for (std::size_t i = 0; i < d_; ++i) {
            const std::size_t j = i + rng_.index(N_ - i);
            std::swap(perm_[i], perm_[j]);
        }
        a.servers.assign(perm_.begin(), perm_.begin() + static_cast<std::ptrdiff_t>(d_));
        std::sort(a.servers.begin(), a.servers.end());
        a.sizes = sample_replicas(dep_, model_, d_, rng_);
        return a;
    }

private:
    RandomStream rng_;
    std::size_t N_, d_;
    double lambda_;
    JobSizeModel model_;
    DependenceModel dep_;
    std::vector<std::uint32_t> perm_;
    std::uint64_t next_id_ = 0;
    double clock_ = 0.0;
};

/// Per-replica service rate of the replica at position `replica` of a job
/// placed on `job_servers`, given the current server queue lengths.
inline double replica_rate(Variant variant, std::span<const std::uint32_t> job_servers,
                           std::size_t replica, std::span<const std::uint32_t> queue_lengths)
{
    auto q_at = [&](std::uint32_t s) {
        const auto q = queue_lengths[s];
        if (q == 0)
            throw ConsistencyError("active replica at an empty server " + std::to_string(s));
        return q;
    };
    switch (variant) {
    case Variant::Original:
    case Variant::FullyServed: return 1.0 / q_at(job_servers[replica]);
    case Variant::LowerBound: {
        std::uint32_t m = std::numeric_limits<std::uint32_t>::max();
        for (auto s : job_servers)
            m = std::min(m, q_at(s));
        return 1.0 / m;
    }
    case Variant::UpperBound: {
        std::uint32_t m = 0;
        for (auto s : job_servers)
            m = std::max(m, q_at(s));
        return 1.0 / m;
    }
    }
    return 0.0;
}

/// Replica sizes as processed by `variant`: the bound systems give every
/// replica the job's minimum size.
inline ReplicaSizes effective_sizes(Variant variant, const ReplicaSizes& raw)
{
    if (variant == Variant::LowerBound || variant == Variant::UpperBound)
        return ReplicaSizes(std::vector<double>(raw.size(), raw.min_size));
    return raw;
}

struct LatencySample {
    std::uint64_t job_id = 0;
    double arrival = 0.0;
    double latency = 0.0;
};

enum class EventKind { Arrival, ReplicaDone, Departure };

struct TraceEvent {
    double time = 0.0;
    EventKind kind = EventKind::Arrival;
    std::uint64_t job = 0;
};

struct EventCounts {
    std::uint64_t arrivals = 0;
    std::uint64_t completions = 0;   // jobs
    std::uint64_t cancellations = 0; // replicas abandoned
    std::uint64_t replica_completions = 0;
    std::uint64_t zero_size = 0;
    std::uint64_t nonminimal_completions = 0; // bound variants only; must stay 0
};

/// Queue lengths sampled at events: row r is (times[r], queues[r*N .. r*N+N)).
struct Trajectory {
    std::size_t N = 0;
    std::vector<double> times;
    std::vector<std::uint32_t> queues;

    std::size_t rows() const noexcept { return times.size(); }
    std::span<const std::uint32_t> row(std::size_t r) const
    {
        return {queues.data() + r * N, N};
    }
    double total(std::size_t r) const
    {
        double s = 0.0;
        for (auto q : row(r))
            s += q;
        return s;
    }
};

struct SimulationRecord {
    Variant variant = Variant::Original;
    std::size_t N = 0;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::vector<LatencySample> latencies;  // measured jobs, ascending id
    std::vector<double> replica_latencies; // FullyServed: per-replica sojourns of measured jobs
    Trajectory trajectory;
    EventCounts counts;
    double end_time = 0.0;
    double jobs_area = 0.0; // integral of jobs in system over [0, end_time]
    std::uint64_t in_system = 0;
    std::uint64_t tagged_incomplete = 0;
    bool capped = false;
    std::vector<TraceEvent> trace;
    std::vector<std::uint32_t> trace_queues; // N entries per trace event

    double mean_latency() const
    {
        if (latencies.empty())
            throw ConfigError("no measured job completed");
        double s = 0.0;
        for (const auto& l : latencies)
            s += l.latency;
        return s / static_cast<double>(latencies.size());
    }
};

/// One pending replica completion chosen by a core.
struct Candidate {
    double dt = 0.0;
    std::uint64_t job = 0;
    std::size_t slot = 0;
    std::uint32_t replica = 0;
};

struct CompletionResult {
    std::uint64_t job = 0;
    std::uint32_t replica = 0;
    bool job_done = false;
    std::uint32_t cancelled = 0;
    bool nonminimal = false;
};

struct JobResidual {
    std::uint64_t job = 0;
    double work = 0.0; // smallest remaining replica work
};

// Cores own the queue state; Simulator owns time, bookkeeping and output.
// A core provides: admit(Arrival) for jobs with positive work, next_completion(),
// advance(dt), complete(Candidate), queue_lengths(), residuals(), check().

/// Replica-level kernel for every variant: each event recomputes all rates and
/// scans all active replicas for the earliest completion.
class ScanCore {
public:
    explicit ScanCore(const SystemConfig& cfg) : variant_(cfg.variant), q_(cfg.N, 0) {}

    void admit(const Arrival& a)
    {
        Job job;
        job.id = a.id;
        job.servers = a.servers;
        job.min_size = a.sizes.min_size;
        for (std::size_t r = 0; r < a.servers.size(); ++r) {
            const double size = a.sizes.sizes[r];
            // FullyServed: zero-size replicas finish at arrival.
            const bool live = !(variant_ == Variant::FullyServed && size <= 0.0);
            job.reps.push_back({size, 0.0, 0.0, live});
            if (live) {
                ++q_[a.servers[r]];
                ++job.live;
            }
        }
        jobs_.push_back(std::move(job));
        refresh_rates();
    }

    std::optional<Candidate> next_completion() const
    {
        std::optional<Candidate> best;
        double best_size = 0.0;
        for (std::size_t slot = 0; slot < jobs_.size(); ++slot) {
            const auto& job = jobs_[slot];
            for (std::uint32_t r = 0; r < job.reps.size(); ++r) {
                const auto& rep = job.reps[r];
                if (!rep.live)
                    continue;
                const double dt = std::max(0.0, rep.size - rep.attained) / rep.rate;
                const bool better =
                    !best || dt < best->dt ||
                    (dt == best->dt &&
                     (job.id < best->job ||
                      (job.id == best->job && rep.size < best_size)));
                if (better) {
                    best = Candidate{dt, job.id, slot, r};
                    best_size = rep.size;
                }
            }
        }
        return best;
    }

    void advance(double dt)
    {
        for (auto& job : jobs_)
            for (auto& rep : job.reps)
                if (rep.live)
                    rep.attained += rep.rate * dt;
    }

    CompletionResult complete(const Candidate& c)
    {
        auto& job = jobs_[c.slot];
        CompletionResult res{job.id, c.replica, false, 0, false};
        if (variant_ == Variant::FullyServed) {
            job.reps[c.replica].live = false;
            --q_[job.servers[c.replica]];
            res.job_done = --job.live == 0;
        } else {
            res.job_done = true;
            res.cancelled = job.live - 1;
            res.nonminimal = (variant_ == Variant::LowerBound || variant_ == Variant::UpperBound) &&
                             job.reps[c.replica].size > job.min_size;
            for (std::size_t r = 0; r < job.reps.size(); ++r)
                if (job.reps[r].live)
                    --q_[job.servers[r]];
            job.live = 0;
        }
        if (res.job_done) {
            std::swap(job, jobs_.back());
            jobs_.pop_back();
        }
        refresh_rates();
        return res;
    }

    std::span<const std::uint32_t> queue_lengths() const { return q_; }

    std::vector<JobResidual> residuals() const
    {
        std::vector<JobResidual> out;
        for (const auto& job : jobs_) {
            double w = std::numeric_limits<double>::infinity();
            for (const auto& rep : job.reps)
                if (rep.live)
                    w = std::min(w, rep.size - rep.attained);
            out.push_back({job.id, w});
        }
        std::sort(out.begin(), out.end(),
                  [](const JobResidual& a, const JobResidual& b) { return a.job < b.job; });
        return out;
    }

    void check() const
    {
        std::vector<std::uint32_t> count(q_.size(), 0);
        std::vector<double> granted(q_.size(), 0.0);
        for (const auto& job : jobs_)
            for (std::size_t r = 0; r < job.reps.size(); ++r)
                if (job.reps[r].live) {
                    ++count[job.servers[r]];
                    granted[job.servers[r]] += job.reps[r].rate;
                    if (job.reps[r].attained > job.reps[r].size * (1.0 + 1e-9) + 1e-12)
                        throw ConsistencyError("replica attained more than its size");
                }
        for (std::size_t s = 0; s < q_.size(); ++s) {
            if (count[s] != q_[s])
                throw ConsistencyError("queue length out of sync at server " + std::to_string(s));
            const bool conserving =
                variant_ == Variant::Original || variant_ == Variant::FullyServed;
            if (conserving && q_[s] > 0 && std::abs(granted[s] - 1.0) > 1e-9)
                throw ConsistencyError("work conservation violated at server " +
                                       std::to_string(s));
        }
    }

private:
    struct Rep {
        double size;
        double attained;
        double rate;
        bool live;
    };
    struct Job {
        std::uint64_t id = 0;
        std::vector<std::uint32_t> servers;
        std::vector<Rep> reps;
        double min_size = 0.0;
        std::uint32_t live = 0;
    };

    void refresh_rates()
    {
        for (auto& job : jobs_)
            for (std::size_t r = 0; r < job.reps.size(); ++r)
                if (job.reps[r].live)
                    job.reps[r].rate = replica_rate(variant_, job.servers, r, q_);
    }

    Variant variant_;
    std::vector<std::uint32_t> q_;
    std::vector<Job> jobs_;
};

/// Kernel for Original and FullyServed. Each server keeps a virtual clock that
/// advances by dt/Q; a replica finishes when the clock reaches its finish tag.
/// Cancelled replicas stay in the heaps and are skipped when they surface.
class ServerClockCore {
public:
    explicit ServerClockCore(const SystemConfig& cfg)
        : variant_(cfg.variant), servers_(cfg.N), q_(cfg.N, 0)
    {
        if (variant_ != Variant::Original && variant_ != Variant::FullyServed)
            throw ConfigError("server-clock kernel supports only original and fully_served");
    }

    void admit(const Arrival& a)
    {
        Job job;
        job.servers = a.servers;
        for (std::uint32_t r = 0; r < a.servers.size(); ++r) {
            const double size = a.sizes.sizes[r];
            const bool live = !(variant_ == Variant::FullyServed && size <= 0.0);
            auto& srv = servers_[a.servers[r]];
            const double tag = srv.vtime + size;
            job.tags.push_back(tag);
            job.live_mask.push_back(live);
            if (live) {
                srv.heap.push({tag, a.id, r});
                ++q_[a.servers[r]];
                ++job.live;
            }
        }
        jobs_.emplace(a.id, std::move(job));
    }

    std::optional<Candidate> next_completion()
    {
        std::optional<Candidate> best;
        for (std::size_t s = 0; s < servers_.size(); ++s) {
            if (q_[s] == 0)
                continue;
            auto& srv = servers_[s];
            drop_stale(srv);
            const auto& top = srv.heap.top();
            const double dt = std::max(0.0, top.tag - srv.vtime) * q_[s];
            if (!best || dt < best->dt || (dt == best->dt && top.job < best->job))
                best = Candidate{dt, top.job, s, top.replica};
        }
        return best;
    }

    void advance(double dt)
    {
        for (std::size_t s = 0; s < servers_.size(); ++s)
            if (q_[s] > 0)
                servers_[s].vtime += dt / q_[s];
    }

    CompletionResult complete(const Candidate& c)
    {
        auto it = jobs_.find(c.job);
        auto& job = it->second;
        CompletionResult res{c.job, c.replica, false, 0, false};
        servers_[c.slot].heap.pop();
        if (variant_ == Variant::FullyServed) {
            job.live_mask[c.replica] = false;
            release(job.servers[c.replica]);
            res.job_done = --job.live == 0;
        } else {
            res.job_done = true;
            res.cancelled = job.live - 1;
            for (std::size_t r = 0; r < job.servers.size(); ++r)
                if (job.live_mask[r]) {
                    job.live_mask[r] = false;
                    release(job.servers[r]);
                }
            job.live = 0;
        }
        if (res.job_done)
            jobs_.erase(it);
        return res;
    }

    std::span<const std::uint32_t> queue_lengths() const { return q_; }

    std::vector<JobResidual> residuals() const
    {
        std::vector<JobResidual> out;
        for (const auto& [id, job] : jobs_) {
            double w = std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < job.servers.size(); ++r)
                if (job.live_mask[r])
                    w = std::min(w, job.tags[r] - servers_[job.servers[r]].vtime);
            out.push_back({id, w});
        }
        std::sort(out.begin(), out.end(),
                  [](const JobResidual& a, const JobResidual& b) { return a.job < b.job; });
        return out;
    }

    void check() const
    {
        std::vector<std::uint32_t> count(q_.size(), 0);
        for (const auto& [id, job] : jobs_)
            for (std::size_t r = 0; r < job.servers.size(); ++r)
                if (job.live_mask[r])
                    ++count[job.servers[r]];
        for (std::size_t s = 0; s < q_.size(); ++s)
            if (count[s] != q_[s])
                throw ConsistencyError("queue length out of sync at server " + std::to_string(s));
    }

private:
    struct Entry {
        double tag;
        std::uint64_t job;
        std::uint32_t replica;
        bool operator>(const Entry& o) const
        {
            return tag != o.tag ? tag > o.tag : job > o.job;
        }
    };
    struct Server {
        double vtime = 0.0;
        std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    };
    struct Job {
        std::vector<std::uint32_t> servers;
        std::vector<double> tags;
        std::vector<bool> live_mask;
        std::uint32_t live = 0;
    };

    bool is_live(const Entry& e) const
    {
        auto it = jobs_.find(e.job);
        return it != jobs_.end() && it->second.live_mask[e.replica];
    }

    void drop_stale(Server& srv)
    {
        while (!srv.heap.empty() && !is_live(srv.heap.top()))
            srv.heap.pop();
    }

    void release(std::uint32_t s)
    {
        if (--q_[s] == 0) {
            // Only cancelled entries can remain; restart the clock.
            servers_[s].heap = {};
            servers_[s].vtime = 0.0;
        }
    }

    Variant variant_;
    std::vector<Server> servers_;
    std::vector<std::uint32_t> q_;
    std::unordered_map<std::uint64_t, Job> jobs_;
};

/// Type-erased handle used by the drivers so that different kernels can run
/// in lockstep.
class SimulatorBase {
public:
    virtual ~SimulatorBase() = default;
    /// Processes every completion strictly before `t`, then moves the clock to `t`.
    virtual void advance_until(double t) = 0;
    /// Completes everything without further arrivals.
    virtual void run_empty() = 0;
    virtual void admit(const Arrival& a) = 0;
    virtual std::uint64_t tagged_pending() const = 0;
    virtual std::span<const std::uint32_t> queue_lengths() const = 0;
    virtual std::vector<JobResidual> residuals() const = 0;
    virtual SimulationRecord finish() = 0;
};

template <class Core>
class Simulator final : public SimulatorBase {
public:
    explicit Simulator(const SystemConfig& cfg)
        : cfg_(cfg), core_(cfg), warmup_(cfg.warmup_jobs()), end_(cfg.measured_end())
    {
        rec_.variant = cfg.variant;
        rec_.N = cfg.N;
        rec_.lambda = cfg.lambda;
        rec_.seed = cfg.seed;
        rec_.trajectory.N = cfg.N;
    }

    void advance_until(double t) override
    {
        while (auto c = core_.next_completion()) {
            if (!(now_ + c->dt < t))
                break;
            step(c->dt);
            on_completion(core_.complete(*c));
        }
        step(t - now_);
        now_ = t;
    }

    void run_empty() override
    {
        while (auto c = core_.next_completion()) {
            step(c->dt);
            on_completion(core_.complete(*c));
        }
    }

    void admit(const Arrival& a) override
    {
        ++rec_.counts.arrivals;
        const bool tagged = is_tagged(a.id);
        if (tagged)
            ++tagged_pending_;
        log_event(EventKind::Arrival, a.id);
        std::uint32_t positive = 0;
        for (double s : a.sizes.sizes)
            positive += s > 0.0;
        const bool fully = cfg_.variant == Variant::FullyServed;
        if (fully && tagged)
            for (double s : a.sizes.sizes)
                if (s <= 0.0)
                    rec_.replica_latencies.push_back(0.0);
        if (fully)
            rec_.counts.replica_completions += a.sizes.size() - positive;
        const bool instant = fully ? positive == 0 : a.sizes.min_size <= 0.0;
        if (instant) {
            ++rec_.counts.zero_size;
            if (!fully)
                rec_.counts.cancellations += a.sizes.size() - 1;
            pending_.emplace(a.id, Pending{a.time, tagged});
            depart(a.id);
        } else {
            pending_.emplace(a.id, Pending{a.time, tagged});
            core_.admit(a);
            ++in_system_;
        }
        sample_trajectory();
        maybe_check();
    }

    std::uint64_t tagged_pending() const override { return tagged_pending_; }
    std::span<const std::uint32_t> queue_lengths() const override { return core_.queue_lengths(); }
    std::vector<JobResidual> residuals() const override { return core_.residuals(); }

    SimulationRecord finish() override
    {
        rec_.end_time = now_;
        rec_.in_system = in_system_;
        rec_.tagged_incomplete = tagged_pending_;
        std::sort(rec_.latencies.begin(), rec_.latencies.end(),
                  [](const LatencySample& a, const LatencySample& b) { return a.job_id < b.job_id; });
        if (rec_.counts.completions + rec_.in_system != rec_.counts.arrivals)
            throw ConsistencyError("completions + in-system != arrivals");
        return std::move(rec_);
    }

    Core& core() { return core_; }

private:
    struct Pending {
        double arrival;
        bool tagged;
    };

    bool is_tagged(std::uint64_t id) const { return id >= warmup_ && id < end_; }

    void step(double dt)
    {
        if (dt <= 0.0)
            return;
        rec_.jobs_area += static_cast<double>(in_system_) * dt;
        core_.advance(dt);
        now_ += dt;
    }

    void on_completion(const CompletionResult& c)
    {
        ++rec_.counts.replica_completions;
        rec_.counts.cancellations += c.cancelled;
        rec_.counts.nonminimal_completions += c.nonminimal;
        if (cfg_.variant == Variant::FullyServed) {
            const auto& p = pending_.at(c.job);
            if (p.tagged)
                rec_.replica_latencies.push_back(now_ - p.arrival);
        }
        if (c.job_done) {
            --in_system_;
            depart(c.job);
        } else {
            log_event(EventKind::ReplicaDone, c.job);
        }
        sample_trajectory();
        maybe_check();
    }

    void depart(std::uint64_t id)
    {
        auto it = pending_.find(id);
        ++rec_.counts.completions;
        if (it->second.tagged) {
            rec_.latencies.push_back({id, it->second.arrival, now_ - it->second.arrival});
            --tagged_pending_;
        }
        pending_.erase(it);
        log_event(EventKind::Departure, id);
    }

    void log_event(EventKind kind, std::uint64_t id)
    {
        if (!cfg_.record_trace)
            return;
        rec_.trace.push_back({now_, kind, id});
        const auto q = core_.queue_lengths();
        rec_.trace_queues.insert(rec_.trace_queues.end(), q.begin(), q.end());
    }

    // Keeps every stride-th event; when full, drops every other row and
    // doubles the stride.
    void sample_trajectory()
    {
        if (events_++ % stride_ != 0)
            return;
        auto& tr = rec_.trajectory;
        if (tr.rows() >= cfg_.trajectory_rows) {
            std::size_t keep = 0;
            for (std::size_t r = 0; r < tr.rows(); r += 2, ++keep) {
                tr.times[keep] = tr.times[r];
                std::copy_n(tr.queues.begin() + static_cast<std::ptrdiff_t>(r * tr.N), tr.N,
                            tr.queues.begin() + static_cast<std::ptrdiff_t>(keep * tr.N));
            }
            tr.times.resize(keep);
            tr.queues.resize(keep * tr.N);
            stride_ *= 2;
            if ((events_ - 1) % stride_ != 0)
                return;
        }
        tr.times.push_back(now_);
        const auto q = core_.queue_lengths();
        tr.queues.insert(tr.queues.end(), q.begin(), q.end());
    }

    void maybe_check()
    {
        if (cfg_.check_invariants)
            core_.check();
    }

    SystemConfig cfg_;
    Core core_;
    std::uint64_t warmup_;
    std::uint64_t end_;
    double now_ = 0.0;
    std::uint64_t in_system_ = 0;
    std::uint64_t tagged_pending_ = 0;
    std::uint64_t events_ = 0;
    std::uint64_t stride_ = 1;
    std::unordered_map<std::uint64_t, Pending> pending_;
    SimulationRecord rec_;
};

/// Called at each arrival epoch with every simulator advanced to that epoch.
using EpochHook = std::function<void(std::span<SimulatorBase* const>)>;

/// Feeds one arrival stream to every simulator in lockstep and applies the
/// horizon and drain rules.
inline std::vector<SimulationRecord> drive(const SystemConfig& cfg,
                                           std::span<SimulatorBase* const> sims,
                                           const EpochHook& hook = {})
{
    ArrivalStream stream(cfg);
    auto feed = [&](const Arrival& a) {
        for (auto* s : sims)
            s->advance_until(a.time);
        if (hook)
            hook(sims);
        for (auto* s : sims)
            s->admit(a);
    };
    bool capped = false;
    if (cfg.horizon.kind == Horizon::Kind::Arrivals) {
        const std::uint64_t n = cfg.horizon.arrivals;
        for (std::uint64_t i = 0; i < n; ++i)
            feed(stream.next());
        if (cfg.drain) {
            auto pending = [&] {
                return std::any_of(sims.begin(), sims.end(),
                                   [](const SimulatorBase* s) { return s->tagged_pending() > 0; });
            };
            std::uint64_t extra = 0;
            while (pending() && extra < n) {
                feed(stream.next());
                ++extra;
            }
            capped = pending();
        }
    } else {
        for (;;) {
            const auto a = stream.next();
            if (a.time > cfg.horizon.time) {
                for (auto* s : sims)
                    s->advance_until(cfg.horizon.time);
                break;
            }
            feed(a);
        }
    }
    std::vector<SimulationRecord> out;
    for (auto* s : sims) {
        out.push_back(s->finish());
        out.back().capped = capped;
    }
    return out;
}

inline std::unique_ptr<SimulatorBase> make_simulator(const SystemConfig& cfg)
{
    const bool clock = cfg.kernel == Kernel::Automatic &&
                       (cfg.variant == Variant::Original || cfg.variant == Variant::FullyServed);
    if (clock)
        return std::make_unique<Simulator<ServerClockCore>>(cfg);
    return std::make_unique<Simulator<ScanCore>>(cfg);
}

inline SimulationRecord run(const SystemConfig& cfg)
{
    cfg.validate();
    auto sim = make_simulator(cfg);
    SimulatorBase* sims[] = {sim.get()};
    return std::move(drive(cfg, sims).front());
}

inline void require_coupleable(std::span<const SystemConfig> configs)
{
    if (configs.empty())
        throw ConfigError("coupled run needs at least one config");
    const auto& a = configs.front();
    for (const auto& b : configs) {
        b.validate();
        const bool same = a.N == b.N && a.d == b.d && a.lambda == b.lambda &&
                          a.model == b.model && a.dep == b.dep && a.seed == b.seed &&
                          a.horizon.kind == b.horizon.kind &&
                          a.horizon.arrivals == b.horizon.arrivals &&
                          a.horizon.time == b.horizon.time && a.warmup_jobs() == b.warmup_jobs() &&
                          a.drain == b.drain;
        if (!same)
            throw ConfigError("coupled configs must differ only in variant and output options");
    }
}

struct CoupledOptions {
    // At every arrival epoch, assert that queue lengths and per-job residual
    // work are ordered lower <= original <= upper across the variants present.
    bool check_ordering = false;
    double tolerance = 1e-9;
};

namespace detail {

inline void check_pair_ordering(const SimulatorBase& lo, const SimulatorBase& hi, double tol)
{
    const auto ql = lo.queue_lengths();
    const auto qh = hi.queue_lengths();
    for (std::size_t s = 0; s < ql.size(); ++s)
        if (ql[s] > qh[s])
            throw ConsistencyError("queue ordering violated at server " + std::to_string(s));
    const auto rl = lo.residuals();
    const auto rh = hi.residuals();
    std::size_t j = 0;
    for (const auto& r : rl) {
        while (j < rh.size() && rh[j].job < r.job)
            ++j;
        const double upper = (j < rh.size() && rh[j].job == r.job) ? rh[j].work : 0.0;
        if (r.work > upper + tol * std::max(1.0, upper))
            throw ConsistencyError("residual work ordering violated for job " +
                                   std::to_string(r.job));
    }
}

} // namespace detail

/// Runs the configs on common random numbers: identical arrival times, server
/// choices and raw replica sizes. Records come back in config order.
inline std::vector<SimulationRecord> run_coupled(std::span<const SystemConfig> configs,
                                                 const CoupledOptions& opts = {})
{
    require_coupleable(configs);
    std::vector<std::unique_ptr<SimulatorBase>> owned;
    std::vector<SimulatorBase*> sims;
    for (const auto& c : configs) {
        owned.push_back(make_simulator(c));
        sims.push_back(owned.back().get());
    }
    EpochHook hook;
    if (opts.check_ordering) {
        auto find = [&](Variant v) -> SimulatorBase* {
            for (std::size_t i = 0; i < configs.size(); ++i)
                if (configs[i].variant == v)
                    return sims[i];
            return nullptr;
        };
        SimulatorBase* lower = find(Variant::LowerBound);
        SimulatorBase* orig = find(Variant::Original);
        SimulatorBase* upper = find(Variant::UpperBound);
        const double tol = opts.tolerance;
        hook = [=](std::span<SimulatorBase* const>) {
            if (lower && orig)
                detail::check_pair_ordering(*lower, *orig, tol);
            if (orig && upper)
                detail::check_pair_ordering(*orig, *upper, tol);
            if (lower && upper && !orig)
                detail::check_pair_ordering(*lower, *upper, tol);
        };
    }
    return drive(configs.front(), sims, hook);
}

/// Jobs (aligned by id) whose latency breaks lower <= middle beyond `tol`.
inline std::uint64_t latency_order_violations(const SimulationRecord& lower,
                                              const SimulationRecord& upper, double tol = 1e-9)
{
    std::uint64_t bad = 0;
    std::size_t j = 0;
    for (const auto& l : lower.latencies) {
        while (j < upper.latencies.size() && upper.latencies[j].job_id < l.job_id)
            ++j;
        if (j == upper.latencies.size() || upper.latencies[j].job_id != l.job_id) {
            ++bad; // measured in one run only
            continue;
        }
        const double u = upper.latencies[j].latency;
        if (l.latency > u + tol * std::max(1.0, u))
            ++bad;
    }
    return bad;
}

/// Runs `body(i)` for i in [0, count) on a small worker pool.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body,
                         std::size_t threads = 0)
{
    if (threads == 0)
        threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t i; !failed && (i = next++) < count;) {
                    try {
                        body(i);
                    } catch (...) {
                        if (!failed.exchange(true))
                            failure = std::current_exception();
                    }
                }
            });
    }
    if (failure)
        std::rethrow_exception(failure);
}

/// Independent replications with seeds derived from cfg.seed; results are in
/// replication order regardless of scheduling.
inline std::vector<SimulationRecord> run_replications(const SystemConfig& cfg, std::size_t reps,
                                                      std::size_t threads = 0)
{
    cfg.validate();
    std::vector<SimulationRecord> out(reps);
    parallel_for(
        reps,
        [&](std::size_t r) {
            auto c = cfg;
            c.seed = derive_seed(cfg.seed, r);
            out[r] = run(c);
        },
        threads);
    return out;
}

/// Across-replication mean latency with a normal 95% half-width.
inline Interval mean_latency(std::span<const SimulationRecord> records)
{
    std::vector<double> means;
    for (const auto& r : records)
        means.push_back(r.mean_latency());
    return replication_interval(means);
}

} // namespace redund
