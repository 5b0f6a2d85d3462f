#include "redund/redund.hpp"
#include "redund/validation.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

using namespace redund;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string format = "csv";
};

struct SystemArgs {
    std::size_t N = 4;
    std::size_t d = 2;
    double lambda = 0.0;
    std::string dist = "exponential(mean=2)";
    std::string dep = "iid";
};

void add_system(CLI::App* cmd, SystemArgs& a, bool with_lambda)
{
    cmd->add_option("-N", a.N, "number of servers")->capture_default_str();
    cmd->add_option("-d", a.d, "replicas per job")->capture_default_str();
    if (with_lambda)
        cmd->add_option("--lambda", a.lambda, "arrival rate")->required();
    cmd->add_option("--dist", a.dist, "job size model, e.g. weibull(shape=0.5, scale=1)")
        ->capture_default_str();
    cmd->add_option("--dep", a.dep, "replica dependence: identical, iid, clayton(theta=...)")
        ->capture_default_str();
}

fs::path out_dir(const Globals& g)
{
    fs::path p = g.out.empty() ? fs::path(".") : fs::path(g.out);
    fs::create_directories(p);
    return p;
}

template <class F>
void write_file(const fs::path& p, F&& body)
{
    auto os = open_output(p.string());
    body(os);
    std::cout << "wrote " << p.string() << '\n';
}

int cmd_report(const Globals& g, const SystemArgs& a, std::size_t mc_samples)
{
    const auto model = JobSizeModel::parse(a.dist);
    const auto dep = DependenceModel::parse(a.dep);
    LoadReport r;
    try {
        r = load_report(a.N, a.d, a.lambda, model, dep);
    } catch (const UnsupportedCombination&) {
        r = load_report(a.N, a.d, a.lambda, model, dep, MonteCarlo{mc_samples, g.seed.value_or(1)});
    }
    std::cout << "rho=" << format_number(r.rho) << '\n'
              << "rho_tilde=" << format_number(r.rho_tilde) << '\n'
              << "mean=" << format_number(r.mean) << '\n'
              << "e_min=" << format_number(r.e_min) << (r.e_min_analytic ? "" : " (monte carlo)")
              << '\n'
              << "lambda_crit_fluid=" << format_number(r.lambda_crit_fluid) << '\n'
              << "lambda_crit_sufficient=" << format_number(r.lambda_crit_sufficient) << '\n';
    if (!g.out.empty()) {
        const LoadRow row{model.spec(), dep.spec(), r};
        write_file(out_dir(g) / "loads.csv",
                   [&](std::ostream& os) { write_loads(os, std::span<const LoadRow>(&row, 1)); });
    }
    return 0;
}

struct SimulateArgs {
    std::string variant = "original";
    std::uint64_t arrivals = 100'000;
    std::optional<double> time;
    std::optional<std::uint64_t> warmup;
    std::size_t replications = 1;
    std::string kernel = "auto";
    bool virtual_queues = false;
};

int cmd_simulate(const Globals& g, const SystemArgs& a, const SimulateArgs& s)
{
    SystemConfig cfg;
    cfg.N = a.N;
    cfg.d = a.d;
    cfg.lambda = a.lambda;
    cfg.model = JobSizeModel::parse(a.dist);
    cfg.dep = DependenceModel::parse(a.dep);
    cfg.variant = parse_variant(s.variant);
    cfg.horizon = s.time ? Horizon::time_limit(*s.time) : Horizon::arrivals_count(s.arrivals);
    cfg.warmup = s.warmup;
    cfg.seed = g.seed.value_or(1);
    if (s.kernel == "scan")
        cfg.kernel = Kernel::Scan;
    else if (s.kernel != "auto")
        throw ConfigError("kernel must be auto or scan");
    if (s.replications < 1)
        throw ConfigError("replications must be >= 1");
    cfg.validate();
    if (s.virtual_queues && cfg.variant != Variant::LowerBound && cfg.variant != Variant::UpperBound)
        throw ConfigError("--virtual needs variant lower or upper");

    std::vector<SimulationRecord> recs(s.replications);
    parallel_for(s.replications, [&](std::size_t r) {
        auto c = cfg;
        c.seed = s.replications == 1 ? cfg.seed : derive_seed(cfg.seed, r);
        recs[r] = s.virtual_queues ? run_virtual(c) : run(c);
    });
    SummaryRow row;
    row.variant = cfg.variant;
    row.lambda = cfg.lambda;
    row.seed = cfg.seed;
    for (const auto& r : recs)
        row.n_jobs += r.latencies.size();
    if (recs.size() >= 2) {
        const auto ci = mean_latency(recs);
        row.mean_latency = ci.mean;
        row.ci_halfwidth = ci.half_width;
    } else {
        row.mean_latency = recs.front().mean_latency();
    }
    std::cout << "variant=" << to_string(cfg.variant) << '\n'
              << "mean_latency=" << csv_number(row.mean_latency) << '\n';
    if (row.ci_halfwidth)
        std::cout << "ci_halfwidth=" << csv_number(*row.ci_halfwidth) << '\n';
    std::cout << "n_jobs=" << row.n_jobs << '\n';
    if (std::any_of(recs.begin(), recs.end(), [](const auto& r) { return r.capped; }))
        std::cout << "status=unstable\n";
    if (!g.out.empty()) {
        const auto dir = out_dir(g);
        write_file(dir / "latencies.csv", [&](std::ostream& os) { write_latencies(os, recs.front()); });
        write_file(dir / "trajectory.csv", [&](std::ostream& os) { write_trajectory(os, recs.front()); });
        write_file(dir / "summary.csv",
                   [&](std::ostream& os) { write_summary(os, std::span<const SummaryRow>(&row, 1)); });
        if (s.virtual_queues)
            write_file(dir / "classes.csv",
                       [&](std::ostream& os) { write_classes(os, build_class_index(cfg.N, cfg.d)); });
    }
    return 0;
}

struct FluidArgs {
    std::string q0 = "1";
    double step = 0.05;
    double horizon = 200.0;
    double window = 0.0;
    double epsilon = 0.0;
    std::string mode = "scalar";
    std::string initial = "fresh";
};

int cmd_fluid(const Globals& g, const SystemArgs& a, const FluidArgs& f)
{
    const auto model = JobSizeModel::parse(a.dist);
    const auto dep = DependenceModel::parse(a.dep);
    auto cfg = fluid_config(a.N, a.d, a.lambda, model, dep);
    cfg.step = f.step;
    cfg.horizon = f.horizon;
    cfg.epsilon = f.epsilon;
    cfg.mode = parse_fluid_mode(f.mode);
    if (f.initial == "fresh")
        cfg.initial = InitialAge::Fresh;
    else if (f.initial == "equilibrium")
        cfg.initial = InitialAge::EquilibriumResidual;
    else
        throw ConfigError("initial must be fresh or equilibrium");
    cfg.q0 = parse_number_list(f.q0, "q0");
    if (cfg.mode != FluidMode::Scalar && cfg.q0.size() == 1)
        cfg.q0.assign(cfg.classes(), cfg.q0.front());
    const auto path = solve_fluid(cfg);
    const double window = f.window > 0.0 ? f.window : f.horizon / 4.0;
    const auto verdict = classify_fluid(path, window);
    const double lambda_crit = static_cast<double>(a.N) / (static_cast<double>(a.d) * cfg.min_mean);
    std::cout << "verdict=" << to_string(verdict.kind) << '\n'
              << "rho_tilde=" << format_number(a.lambda / lambda_crit) << '\n'
              << "lambda_crit=" << format_number(lambda_crit) << '\n'
              << "slope=" << csv_number(verdict.slope) << '\n';
    if (verdict.kind == FluidVerdict::Kind::Stable)
        std::cout << "drain_time=" << csv_number(verdict.drain_time) << '\n';
    if (!g.out.empty()) {
        const auto dir = out_dir(g);
        const FluidSummaryRow row{f.mode, a.lambda, a.lambda / lambda_crit, lambda_crit,
                                  f.step, f.horizon, path.epsilon, verdict};
        write_file(dir / "fluid.csv", [&](std::ostream& os) { write_fluid(os, path); });
        write_file(dir / "fluid_summary.csv", [&](std::ostream& os) {
            write_fluid_summary(os, std::span<const FluidSummaryRow>(&row, 1));
        });
    }
    return 0;
}

struct ThresholdArgs {
    std::string grid;
    std::string variant = "original";
    std::size_t replications = 5;
    std::uint64_t arrivals = 100'000;
    std::size_t threads = 0;
};

int cmd_threshold(const Globals& g, const SystemArgs& a, const ThresholdArgs& t)
{
    SystemConfig base;
    base.N = a.N;
    base.d = a.d;
    base.model = JobSizeModel::parse(a.dist);
    base.dep = DependenceModel::parse(a.dep);
    base.variant = parse_variant(t.variant);
    base.seed = g.seed.value_or(1);
    const auto grid = parse_number_list(t.grid, "grid");
    base.lambda = grid.front();
    ThresholdOptions opts{t.replications, t.arrivals, t.threads};
    const auto est = estimate_threshold(base, grid, opts);
    for (const auto& p : est.points)
        std::cout << "lambda=" << format_number(p.lambda) << " slope=" << csv_number(p.slope)
                  << " verdict=" << to_string(p.verdict) << '\n';
    if (est.found)
        std::cout << "lambda_star=" << csv_number(est.lambda_star) << '\n'
                  << "ci=[" << csv_number(est.ci_lo) << ", " << csv_number(est.ci_hi) << "]\n";
    else
        std::cout << "lambda_star=not found\n";
    if (!g.out.empty())
        write_file(out_dir(g) / "threshold.csv", [&](std::ostream& os) { write_threshold(os, est); });
    return 0;
}

int cmd_experiment(const Globals& g, const std::string& file, std::optional<std::size_t> threads)
{
    auto spec = load_experiment(file);
    if (g.seed)
        spec.seed = *g.seed;
    if (threads)
        spec.threads = *threads;
    const auto res = run_experiment(spec, out_dir(g));
    for (const auto& [k, v] : res.summary)
        std::cout << k << '=' << v << '\n';
    for (const auto& p : res.files)
        std::cout << "wrote " << p.string() << '\n';
    return 0;
}

int cmd_validate(const Globals& g, std::uint64_t arrivals)
{
    bool ok = true;
    for (const auto& r : run_validation_suite(arrivals, g.seed.value_or(1))) {
        std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name;
        if (!r.passed)
            std::cout << ": " << r.detail;
        std::cout << '\n';
        ok = ok && r.passed;
    }
    return ok ? 0 : 2;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Simulation and fluid analysis for redundancy-d processor-sharing systems"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "base random seed");
    app.add_option("--out", g.out, "output directory for CSV files");
    app.add_option("--format", g.format, "output format (csv)")->capture_default_str();

    SystemArgs sys;
    std::size_t mc_samples = 1'000'000;
    auto* report = app.add_subcommand("report", "print loads and fluid thresholds");
    add_system(report, sys, true);
    report->add_option("--mc-samples", mc_samples, "Monte-Carlo samples when E[min] has no closed form");

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "simulate one system configuration");
    add_system(simulate, sys, true);
    simulate->add_option("--variant", sim.variant, "original, lower, upper, fully_served")
        ->capture_default_str();
    simulate->add_option("--arrivals", sim.arrivals, "arrival horizon")->capture_default_str();
    simulate->add_option("--time", sim.time, "time horizon (overrides --arrivals)");
    simulate->add_option("--warmup", sim.warmup, "discarded initial jobs (default 10%)");
    simulate->add_option("--replications", sim.replications)->capture_default_str();
    simulate->add_option("--kernel", sim.kernel, "auto or scan")->capture_default_str();
    simulate->add_flag("--virtual", sim.virtual_queues, "run bound variants as virtual queues");

    FluidArgs fl;
    auto* fluid = app.add_subcommand("fluid", "solve and classify the fluid model");
    add_system(fluid, sys, true);
    fluid->add_option("--q0", fl.q0, "initial mass per class (one value or one per class)")
        ->capture_default_str();
    fluid->add_option("--step", fl.step)->capture_default_str();
    fluid->add_option("--horizon", fl.horizon)->capture_default_str();
    fluid->add_option("--window", fl.window, "growth window (default horizon/4)");
    fluid->add_option("--epsilon", fl.epsilon, "empty threshold (default from the step)");
    fluid->add_option("--mode", fl.mode, "scalar, min or max")->capture_default_str();
    fluid->add_option("--initial", fl.initial, "fresh or equilibrium")->capture_default_str();

    ThresholdArgs th;
    auto* threshold = app.add_subcommand("threshold", "estimate the stability threshold by simulation");
    add_system(threshold, sys, false);
    threshold->add_option("--grid", th.grid, "lambda grid: list or range(start=, stop=, step=)")
        ->required();
    threshold->add_option("--variant", th.variant)->capture_default_str();
    threshold->add_option("--replications", th.replications)->capture_default_str();
    threshold->add_option("--arrivals", th.arrivals)->capture_default_str();
    threshold->add_option("--threads", th.threads);

    std::string spec_file;
    std::optional<std::size_t> exp_threads;
    auto* experiment = app.add_subcommand("experiment", "run an experiment spec file");
    experiment->add_option("spec", spec_file, "spec file")->required();
    experiment->add_option("--threads", exp_threads);

    std::uint64_t val_arrivals = 5000;
    auto* validate = app.add_subcommand("validate", "run the coupling and equivalence checks");
    validate->add_option("--arrivals", val_arrivals)->capture_default_str();

    for (auto* sub : app.get_subcommands({}))
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (g.format != "csv")
            throw ConfigError("only --format csv is supported");
        if (*report)
            return cmd_report(g, sys, mc_samples);
        if (*simulate)
            return cmd_simulate(g, sys, sim);
        if (*fluid)
            return cmd_fluid(g, sys, fl);
        if (*threshold)
            return cmd_threshold(g, sys, th);
        if (*experiment)
            return cmd_experiment(g, spec_file, exp_threads);
        if (*validate)
            return cmd_validate(g, val_arrivals);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const UnsupportedCombination& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
