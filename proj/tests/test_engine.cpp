#include "redund/engine.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <vector>

using namespace redund;

namespace {

SystemConfig base_config(std::size_t N, std::size_t d, double lambda, JobSizeModel m,
                         DependenceModel dep, std::uint64_t arrivals, std::uint64_t seed = 7)
{
    SystemConfig c;
    c.N = N;
    c.d = d;
    c.lambda = lambda;
    c.model = m;
    c.dep = dep;
    c.horizon = Horizon::arrivals_count(arrivals);
    c.seed = seed;
    return c;
}

std::vector<SystemConfig> with_variants(const SystemConfig& c, std::vector<Variant> vs)
{
    std::vector<SystemConfig> out;
    for (auto v : vs) {
        auto x = c;
        x.variant = v;
        out.push_back(x);
    }
    return out;
}

double max_latency_gap(const SimulationRecord& a, const SimulationRecord& b)
{
    EXPECT_EQ(a.latencies.size(), b.latencies.size());
    double gap = 0.0;
    for (std::size_t i = 0; i < std::min(a.latencies.size(), b.latencies.size()); ++i) {
        EXPECT_EQ(a.latencies[i].job_id, b.latencies[i].job_id);
        gap = std::max(gap, std::abs(a.latencies[i].latency - b.latencies[i].latency));
    }
    return gap;
}

} // namespace

TEST(ReplicaRate, ExamplesFromTwoServerJob)
{
    const std::vector<std::uint32_t> servers = {0, 1};
    const std::vector<std::uint32_t> q = {4, 5};
    EXPECT_DOUBLE_EQ(replica_rate(Variant::Original, servers, 0, q), 0.25);
    EXPECT_DOUBLE_EQ(replica_rate(Variant::Original, servers, 1, q), 0.2);
    EXPECT_DOUBLE_EQ(replica_rate(Variant::LowerBound, servers, 0, q), 0.25);
    EXPECT_DOUBLE_EQ(replica_rate(Variant::LowerBound, servers, 1, q), 0.25);
    EXPECT_DOUBLE_EQ(replica_rate(Variant::UpperBound, servers, 0, q), 0.2);
    EXPECT_DOUBLE_EQ(replica_rate(Variant::UpperBound, servers, 1, q), 0.2);
    EXPECT_DOUBLE_EQ(replica_rate(Variant::FullyServed, servers, 1, q), 0.2);
}

TEST(ReplicaRate, EmptyServerIsAConsistencyError)
{
    const std::vector<std::uint32_t> servers = {0, 1};
    const std::vector<std::uint32_t> q = {0, 5};
    EXPECT_THROW(replica_rate(Variant::Original, servers, 0, q), ConsistencyError);
    EXPECT_THROW(replica_rate(Variant::UpperBound, servers, 1, q), ConsistencyError);
}

TEST(EffectiveSizes, BoundsUseTheMinimum)
{
    const ReplicaSizes raw(std::vector<double>{3.0, 1.2});
    EXPECT_EQ(effective_sizes(Variant::LowerBound, raw).sizes, (std::vector<double>{1.2, 1.2}));
    EXPECT_EQ(effective_sizes(Variant::UpperBound, raw).sizes, (std::vector<double>{1.2, 1.2}));
    EXPECT_EQ(effective_sizes(Variant::Original, raw).sizes, (std::vector<double>{3.0, 1.2}));
    EXPECT_EQ(effective_sizes(Variant::FullyServed, raw).sizes, (std::vector<double>{3.0, 1.2}));
    const ReplicaSizes same(std::vector<double>{7, 7, 7});
    EXPECT_EQ(effective_sizes(Variant::UpperBound, same).sizes, (std::vector<double>{7, 7, 7}));
}

TEST(SystemConfig, Validation)
{
    auto c = base_config(4, 2, 1.0, JobSizeModel::exponential(1), DependenceModel::iid(), 100);
    EXPECT_NO_THROW(c.validate());
    auto bad = c;
    bad.d = 5;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.lambda = 0.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.warmup = 100;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.horizon = Horizon::arrivals_count(0);
    EXPECT_THROW(run(bad), ConfigError);
    bad = c;
    bad.horizon = Horizon::time_limit(-1.0);
    EXPECT_THROW(run(bad), ConfigError);
    EXPECT_EQ(c.warmup_jobs(), 10u);
}

TEST(ArrivalStream, SubsetsAreUniform)
{
    auto c = base_config(5, 2, 1.0, JobSizeModel::exponential(1), DependenceModel::iid(), 1);
    ArrivalStream s(c);
    std::map<std::vector<std::uint32_t>, int> counts;
    const int n = 100'000;
    for (int i = 0; i < n; ++i) {
        const auto a = s.next();
        ASSERT_EQ(a.servers.size(), 2u);
        ASSERT_LT(a.servers[0], a.servers[1]);
        ++counts[a.servers];
    }
    ASSERT_EQ(counts.size(), 10u);
    double chi2 = 0.0;
    for (const auto& [set, k] : counts)
        chi2 += (k - n / 10.0) * (k - n / 10.0) / (n / 10.0);
    EXPECT_LT(chi2, 27.88); // chi-square(9) at 0.001
}

TEST(Run, ProcessorSharingSingleServerMeanLatency)
{
    auto c = base_config(1, 1, 0.5, JobSizeModel::exponential(1), DependenceModel::iid(), 100'000);
    const auto recs = run_replications(c, 10);
    const auto ci = mean_latency(recs);
    EXPECT_LE(std::abs(ci.mean - 2.0), 3.0 * ci.half_width) << ci.mean << " +- " << ci.half_width;
}

TEST(Run, IntervalCoverageOfTheProcessorSharingMean)
{
    int covered = 0;
    for (std::uint64_t e = 0; e < 10; ++e) {
        auto c = base_config(1, 1, 0.5, JobSizeModel::exponential(1), DependenceModel::iid(), 20'000,
                             1000 + e);
        covered += mean_latency(run_replications(c, 10)).contains(2.0);
    }
    EXPECT_GE(covered, 8);
}

TEST(Run, DeterministicGivenSeed)
{
    auto c = base_config(4, 2, 1.2, JobSizeModel::weibull(0.5, 1), DependenceModel::iid(), 5000);
    const auto a = run(c);
    const auto b = run(c);
    ASSERT_EQ(a.latencies.size(), b.latencies.size());
    for (std::size_t i = 0; i < a.latencies.size(); ++i) {
        EXPECT_EQ(a.latencies[i].job_id, b.latencies[i].job_id);
        EXPECT_EQ(a.latencies[i].latency, b.latencies[i].latency);
    }
    EXPECT_EQ(a.trajectory.times, b.trajectory.times);
    EXPECT_EQ(a.trajectory.queues, b.trajectory.queues);
    EXPECT_EQ(a.counts.completions, b.counts.completions);
    c.seed = 8;
    EXPECT_NE(run(c).latencies.front().latency, a.latencies.front().latency);
}

TEST(Run, KernelsAgree)
{
    for (auto v : {Variant::Original, Variant::FullyServed}) {
        auto c = base_config(4, 2, 1.0, JobSizeModel::bimodal(1, 11, 0.9), DependenceModel::iid(),
                             20'000);
        c.variant = v;
        const auto fast = run(c);
        c.kernel = Kernel::Scan;
        const auto scan = run(c);
        EXPECT_LT(max_latency_gap(fast, scan), 1e-8) << to_string(v);
    }
}

TEST(Run, InvariantsHoldAtEveryEvent)
{
    for (auto v : {Variant::Original, Variant::LowerBound, Variant::UpperBound, Variant::FullyServed})
        for (auto k : {Kernel::Automatic, Kernel::Scan}) {
            auto c = base_config(4, 2, 1.0, JobSizeModel::exponential(2), DependenceModel::iid(), 3000);
            c.variant = v;
            c.kernel = k;
            c.check_invariants = true;
            const auto r = run(c);
            EXPECT_EQ(r.counts.completions + r.in_system, r.counts.arrivals);
            EXPECT_EQ(r.counts.nonminimal_completions, 0u);
            EXPECT_FALSE(r.capped);
            EXPECT_EQ(r.tagged_incomplete, 0u);
            EXPECT_EQ(r.latencies.size(), 3000u - 300u);
            for (const auto& l : r.latencies)
                EXPECT_GE(l.latency, 0.0);
        }
}

TEST(Run, CancellationCounts)
{
    auto c = base_config(4, 3, 0.5, JobSizeModel::exponential(2), DependenceModel::iid(), 2000);
    c.drain = false;
    const auto r = run(c);
    // Each departed job abandons its two other replicas.
    EXPECT_EQ(r.counts.cancellations, 2 * r.counts.completions);
}

TEST(Run, ZeroSizeJobsLeaveAtArrival)
{
    auto c = base_config(4, 2, 1.0, JobSizeModel::scaled_bernoulli(4), DependenceModel::identical(),
                         20'000);
    const auto r = run(c);
    EXPECT_GT(r.counts.zero_size, 0u);
    std::size_t zeros = 0;
    for (const auto& l : r.latencies)
        zeros += l.latency == 0.0;
    EXPECT_NEAR(static_cast<double>(zeros) / r.latencies.size(), 0.75, 0.02);
    // Fully served: a zero replica finishes at once while its siblings run.
    c.dep = DependenceModel::iid();
    c.variant = Variant::FullyServed;
    const auto f = run(c);
    EXPECT_EQ(f.replica_latencies.size(), 2 * f.latencies.size());
}

TEST(Run, TimeHorizonStopsAtT)
{
    auto c = base_config(3, 2, 1.0, JobSizeModel::exponential(1), DependenceModel::iid(), 1);
    c.horizon = Horizon::time_limit(500.0);
    const auto r = run(c);
    EXPECT_DOUBLE_EQ(r.end_time, 500.0);
    EXPECT_NEAR(static_cast<double>(r.counts.arrivals), 500.0, 5 * std::sqrt(500.0));
}

TEST(Run, TrajectoryIsThinnedToTheRowCap)
{
    auto c = base_config(4, 2, 1.0, JobSizeModel::exponential(2), DependenceModel::iid(), 50'000);
    c.trajectory_rows = 1000;
    const auto r = run(c);
    EXPECT_LE(r.trajectory.rows(), 1000u);
    EXPECT_GE(r.trajectory.rows(), 400u);
    EXPECT_TRUE(std::is_sorted(r.trajectory.times.begin(), r.trajectory.times.end()));
    EXPECT_EQ(r.trajectory.queues.size(), r.trajectory.rows() * 4);
}

TEST(Run, LittlesLaw)
{
    auto c = base_config(4, 2, 1.2, JobSizeModel::exponential(2), DependenceModel::iid(), 200'000);
    c.warmup = 0;
    const auto r = run(c);
    const double L = r.jobs_area / r.end_time;
    const double lam = static_cast<double>(r.counts.arrivals) / r.end_time;
    EXPECT_NEAR(L, lam * r.mean_latency(), 0.03 * L);
}

TEST(Coupled, BoundsBracketEveryJob)
{
    for (const auto& [name, m] : reference_models()) {
        auto c = base_config(4, 2, 0.7, m, DependenceModel::iid(), 5000, 31);
        const auto cfgs = with_variants(c, {Variant::LowerBound, Variant::Original, Variant::UpperBound});
        const auto recs = run_coupled(cfgs, {.check_ordering = true});
        EXPECT_EQ(latency_order_violations(recs[0], recs[1]), 0u) << name;
        EXPECT_EQ(latency_order_violations(recs[1], recs[2]), 0u) << name;
        EXPECT_EQ(recs[0].counts.nonminimal_completions, 0u);
        EXPECT_EQ(recs[2].counts.nonminimal_completions, 0u);
    }
}

TEST(Coupled, MatchesStandaloneRuns)
{
    auto c = base_config(4, 3, 0.6, JobSizeModel::erlang(2, 1), DependenceModel::iid(), 5000);
    const auto cfgs = with_variants(c, {Variant::Original, Variant::UpperBound});
    const auto recs = run_coupled(cfgs);
    EXPECT_EQ(max_latency_gap(recs[0], run(cfgs[0])), 0.0);
    EXPECT_EQ(max_latency_gap(recs[1], run(cfgs[1])), 0.0);
}

TEST(Coupled, RejectsMismatchedConfigs)
{
    auto c = base_config(4, 2, 0.7, JobSizeModel::exponential(2), DependenceModel::iid(), 100);
    auto cfgs = with_variants(c, {Variant::LowerBound, Variant::Original});
    cfgs[1].lambda = 0.8;
    EXPECT_THROW(run_coupled(cfgs), ConfigError);
    cfgs[1] = c;
    cfgs[1].d = 3;
    EXPECT_THROW(run_coupled(cfgs), ConfigError);
    cfgs[1] = c;
    cfgs[1].model = JobSizeModel::exponential(1);
    EXPECT_THROW(run_coupled(cfgs), ConfigError);
}

TEST(Coupled, DegenerateReplicationCoincides)
{
    const std::vector<Variant> all = {Variant::LowerBound, Variant::Original, Variant::UpperBound,
                                      Variant::FullyServed};
    for (std::size_t d : {1u, 4u}) {
        auto c = base_config(4, d, 0.4, JobSizeModel::weibull(0.5, 1), DependenceModel::identical(),
                             5000);
        const auto recs = run_coupled(with_variants(c, all));
        for (std::size_t i = 1; i < recs.size(); ++i)
            EXPECT_LT(max_latency_gap(recs[0], recs[i]), 1e-9) << "d=" << d << " i=" << i;
    }
}

TEST(FullyServed, PerReplicaSojournMatchesProcessorSharing)
{
    // Each server sees Poisson(d lambda / N) replicas of mean size 2.
    auto c = base_config(4, 2, 0.6, JobSizeModel::bimodal(1, 11, 0.9), DependenceModel::iid(),
                         100'000);
    c.variant = Variant::FullyServed;
    const auto recs = run_replications(c, 10);
    std::vector<double> means;
    for (const auto& r : recs) {
        double s = 0.0;
        for (double x : r.replica_latencies)
            s += x;
        means.push_back(s / r.replica_latencies.size());
    }
    const auto ci = replication_interval(means);
    const double expect = 2.0 / (1.0 - 2 * 0.6 * 2.0 / 4);
    EXPECT_LE(std::abs(ci.mean - expect), 3.0 * ci.half_width) << ci.mean;
}

TEST(MeanLatency, ReplicationInterval)
{
    const std::vector<double> v = {2.0, 2.2, 2.1, 1.9, 2.3};
    const auto ci = replication_interval(v);
    EXPECT_NEAR(ci.mean, 2.1, 1e-12);
    EXPECT_NEAR(ci.half_width, 1.959963984540054 * 0.158113883008419 / std::sqrt(5.0), 1e-12);
    EXPECT_NEAR(ci.half_width, 0.139, 5e-4);
    std::vector<SimulationRecord> one(1);
    one[0].latencies.push_back({0, 0.0, 1.0});
    EXPECT_THROW(mean_latency(one), ConfigError);
    std::vector<SimulationRecord> empty(2);
    EXPECT_THROW(mean_latency(empty), ConfigError);
}
