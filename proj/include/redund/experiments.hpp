#pragma once

// Config-driven experiment runner: spec files, scenarios, CSV artifacts and
// manifests.
//
// Spec file format: one `key = value` per line, `#` starts a comment, and
// `[section]` headers open one level of sections. Recognized keys:
//
//   name, scenario, output
//   [system]  N, d, dep, models, variants, lambda | rho_tilde
//   [run]     replications, arrivals, warmup, seed, threads
//   [fluid]   q0, step, horizon, window, epsilon, mode, initial
//
// Lists are comma separated (optionally bracketed) or written as
// range(start=, stop=, step=) with an inclusive stop. `models = reference`
// expands to the seven preset models. A `[manifest]` section is ignored on
// input, so a manifest can be run again as a spec.

#include "redund/csv.hpp"
#include "redund/distributions.hpp"
#include "redund/engine.hpp"
#include "redund/error.hpp"
#include "redund/fluid.hpp"
#include "redund/stability.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace redund {

inline constexpr const char* toolkit_version = "0.1.0";

// Cells above this rho_tilde are annotated high-variance.
inline constexpr double high_variance_load = 0.97;

struct SpecEntry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

struct SpecSection {
    std::string name; // empty for the top level
    std::vector<SpecEntry> entries;

    const SpecEntry* find(std::string_view key) const
    {
        for (const auto& e : entries)
            if (e.key == key)
                return &e;
        return nullptr;
    }
};

struct SpecFile {
    std::vector<SpecSection> sections;

    const SpecSection* section(std::string_view name) const
    {
        for (const auto& s : sections)
            if (s.name == name)
                return &s;
        return nullptr;
    }
};

inline SpecFile parse_spec_text(std::string_view text)
{
    SpecFile file;
    file.sections.push_back({});
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos)
            nl = text.size();
        auto line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto where = " (line " + std::to_string(line_no) + ")";
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("malformed section header" + where);
            auto name = to_lower(trim(line.substr(1, line.size() - 2)));
            if (name.empty() || name.find_first_of("[]") != std::string::npos)
                throw ConfigError("malformed section header" + where);
            for (const auto& s : file.sections)
                if (s.name == name)
                    throw ConfigError("duplicate section [" + name + "]" + where);
            file.sections.push_back({name, {}});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("expected key = value" + where);
        auto key = to_lower(trim(line.substr(0, eq)));
        auto value = std::string(trim(line.substr(eq + 1)));
        if (key.empty())
            throw ConfigError("empty key" + where);
        if (value.empty())
            throw ConfigError("empty value for '" + key + "'" + where);
        auto& sec = file.sections.back();
        if (sec.find(key))
            throw ConfigError("duplicate key '" + key + "'" + where);
        sec.entries.push_back({key, value, line_no});
    }
    return file;
}

/// Numbers as a comma list, a bracketed list or range(start=, stop=, step=).
inline std::vector<double> parse_number_list(std::string_view text, std::string_view what)
{
    text = trim(text);
    if (text.size() >= 2 && text.front() == '[' && text.back() == ']')
        text = trim(text.substr(1, text.size() - 2));
    std::vector<double> out;
    if (to_lower(text.substr(0, std::min<std::size_t>(text.size(), 6))) == "range(") {
        const auto call = parse_call(text);
        call.expect_only({"start", "stop", "step"});
        const double start = call.number("start"), stop = call.number("stop");
        const double step = call.number("step");
        if (!(step > 0.0) || stop < start)
            throw ConfigError(std::string(what) + ": range needs step > 0 and stop >= start");
        const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
        if (count > 100'000)
            throw ConfigError(std::string(what) + ": range too long");
        for (std::size_t i = 0; i < count; ++i)
            out.push_back(start + static_cast<double>(i) * step);
        return out;
    }
    for (const auto& piece : split_top_level(text, ','))
        out.push_back(parse_number(piece, what));
    if (out.empty())
        throw ConfigError(std::string(what) + ": empty list");
    return out;
}

inline std::vector<std::size_t> parse_count_list(std::string_view text, std::string_view what)
{
    std::vector<std::size_t> out;
    for (double x : parse_number_list(text, what)) {
        if (!(x >= 1.0) || x != std::floor(x) || x > 1e9)
            throw ConfigError(std::string(what) + " must hold positive integers");
        out.push_back(static_cast<std::size_t>(x));
    }
    return out;
}

inline std::string join_numbers(std::span<const double> xs)
{
    std::string out;
    for (double x : xs)
        out += (out.empty() ? "" : ", ") + format_number(x);
    return out;
}

enum class Scenario {
    LatencySweep,
    NearInsensitivity,
    LoadVsD,
    ThresholdSweep,
    FluidRun,
    BoundComparison
};

inline const char* to_string(Scenario s) noexcept
{
    switch (s) {
    case Scenario::LatencySweep: return "latency_sweep";
    case Scenario::NearInsensitivity: return "near_insensitivity";
    case Scenario::LoadVsD: return "load_vs_d";
    case Scenario::ThresholdSweep: return "threshold_sweep";
    case Scenario::FluidRun: return "fluid_run";
    case Scenario::BoundComparison: return "bound_comparison";
    }
    return "?";
}

inline Scenario parse_scenario(std::string_view text)
{
    const auto t = to_lower(trim(text));
    for (auto s : {Scenario::LatencySweep, Scenario::NearInsensitivity, Scenario::LoadVsD,
                   Scenario::ThresholdSweep, Scenario::FluidRun, Scenario::BoundComparison})
        if (t == to_string(s))
            return s;
    throw ConfigError("unknown scenario '" + std::string(text) + "'");
}

struct ExperimentSpec {
    std::string name;
    Scenario scenario = Scenario::LatencySweep;
    std::string output; // subdirectory of the output root; empty for the root

    std::size_t N = 4;
    std::vector<std::size_t> d_values{2};
    DependenceModel dep;
    std::vector<NamedModel> models;
    std::vector<Variant> variants;
    // Exactly one of the two grids is set: arrival rates, or rho_tilde values
    // converted to a rate per (model, d).
    std::vector<double> lambdas;
    std::vector<double> rho_tildes;

    std::size_t replications = 10;
    std::uint64_t arrivals = 100'000;
    std::optional<double> warmup; // fraction of arrivals
    std::uint64_t seed = 1;
    std::size_t threads = 0;

    double q0 = 1.0;
    double step = 0.05;
    double horizon = 100.0;
    double window = 0.0; // 0: a quarter of the horizon
    double epsilon = 0.0;
    FluidMode mode = FluidMode::Scalar;
    InitialAge initial = InitialAge::Fresh;

    bool uses_rho_tilde() const { return !rho_tildes.empty(); }
    std::span<const double> grid() const { return uses_rho_tilde() ? rho_tildes : lambdas; }

    void validate() const
    {
        if (name.empty() || name.find_first_of("/\\") != std::string::npos)
            throw ConfigError("experiment name must be a plain file stem");
        if (N < 1)
            throw ConfigError("N must be >= 1");
        if (d_values.empty())
            throw ConfigError("d needs at least one value");
        for (auto d : d_values)
            if (d < 1 || d > N)
                throw ConfigError("every d must satisfy 1 <= d <= N");
        if (models.empty())
            throw ConfigError("models needs at least one entry");
        if (lambdas.empty() == rho_tildes.empty())
            throw ConfigError("give exactly one of lambda or rho_tilde");
        const auto g = grid();
        for (double x : g)
            if (!(x > 0.0) || !std::isfinite(x))
                throw ConfigError("grid values must be positive");
        for (std::size_t i = 1; i < g.size(); ++i)
            if (!(g[i] > g[i - 1]))
                throw ConfigError("lambda grid must be strictly increasing");
        if (replications < 1 || arrivals < 1)
            throw ConfigError("replications and arrivals must be positive");
        if (warmup && !(*warmup >= 0.0 && *warmup < 1.0))
            throw ConfigError("warmup is a fraction in [0, 1)");
        const bool single = models.size() == 1 && d_values.size() == 1;
        switch (scenario) {
        case Scenario::ThresholdSweep:
            if (!single || variants.size() != 1)
                throw ConfigError("threshold_sweep takes one model, one d and one variant");
            if (g.size() < 2 || replications < 2)
                throw ConfigError("threshold_sweep needs two grid points and two replications");
            break;
        case Scenario::FluidRun:
            if (!single || g.size() != 1)
                throw ConfigError("fluid_run takes one model, one d and one lambda");
            if (!(step > 0.0) || !(horizon > step) || !(q0 >= 0.0) || window < 0.0 ||
                window > horizon || epsilon < 0.0)
                throw ConfigError("fluid_run needs 0 < step < horizon, q0 >= 0, window <= horizon");
            break;
        default:
            if (variants.empty())
                throw ConfigError("variants needs at least one entry");
            break;
        }
    }
};

namespace detail {

inline NamedModel named_model(std::string_view text)
{
    for (const auto& p : reference_models())
        if (to_lower(trim(text)) == to_lower(p.name))
            return p;
    auto m = JobSizeModel::parse(text);
    return {m.spec(), m};
}

inline std::vector<Variant> default_variants(Scenario s)
{
    switch (s) {
    case Scenario::LatencySweep:
    case Scenario::BoundComparison:
        return {Variant::LowerBound, Variant::Original, Variant::UpperBound, Variant::FullyServed};
    default: return {Variant::Original};
    }
}

} // namespace detail

inline ExperimentSpec experiment_from_spec(const SpecFile& file, std::string default_name = {})
{
    ExperimentSpec spec;
    spec.name = std::move(default_name);
    std::optional<Scenario> scenario;
    bool models_set = false, variants_set = false;
    for (const auto& sec : file.sections) {
        for (const auto& e : sec.entries) {
            const auto where = " (line " + std::to_string(e.line) + ")";
            const auto& k = e.key;
            const auto& v = e.value;
            auto unknown = [&] {
                return ConfigError("unknown key '" + k + "'" +
                                   (sec.name.empty() ? "" : " in [" + sec.name + "]") + where);
            };
            try {
                if (sec.name.empty()) {
                    if (k == "name")
                        spec.name = v;
                    else if (k == "scenario")
                        scenario = parse_scenario(v);
                    else if (k == "output")
                        spec.output = v;
                    else
                        throw unknown();
                } else if (sec.name == "system") {
                    if (k == "n")
                        spec.N = parse_count_list(v, "N").at(0);
                    else if (k == "d")
                        spec.d_values = parse_count_list(v, "d");
                    else if (k == "dep")
                        spec.dep = DependenceModel::parse(v);
                    else if (k == "models") {
                        models_set = true;
                        if (to_lower(v) == "reference") {
                            spec.models = reference_models();
                        } else {
                            for (const auto& piece : split_top_level(v, ','))
                                spec.models.push_back(detail::named_model(piece));
                        }
                    } else if (k == "model") {
                        models_set = true;
                        spec.models = {detail::named_model(v)};
                    } else if (k == "variants" || k == "variant") {
                        variants_set = true;
                        for (const auto& piece : split_top_level(v, ','))
                            spec.variants.push_back(parse_variant(piece));
                    } else if (k == "lambda")
                        spec.lambdas = parse_number_list(v, "lambda");
                    else if (k == "rho_tilde")
                        spec.rho_tildes = parse_number_list(v, "rho_tilde");
                    else
                        throw unknown();
                } else if (sec.name == "run") {
                    if (k == "replications")
                        spec.replications = parse_count_list(v, k).at(0);
                    else if (k == "arrivals")
                        spec.arrivals = parse_count_list(v, k).at(0);
                    else if (k == "warmup")
                        spec.warmup = parse_number(v, k);
                    else if (k == "seed")
                        spec.seed = static_cast<std::uint64_t>(parse_number(v, k));
                    else if (k == "threads")
                        spec.threads = static_cast<std::size_t>(parse_number(v, k));
                    else
                        throw unknown();
                } else if (sec.name == "fluid") {
                    if (k == "q0")
                        spec.q0 = parse_number(v, k);
                    else if (k == "step")
                        spec.step = parse_number(v, k);
                    else if (k == "horizon")
                        spec.horizon = parse_number(v, k);
                    else if (k == "window")
                        spec.window = parse_number(v, k);
                    else if (k == "epsilon")
                        spec.epsilon = parse_number(v, k);
                    else if (k == "mode")
                        spec.mode = parse_fluid_mode(v);
                    else if (k == "initial") {
                        const auto t = to_lower(v);
                        if (t == "fresh")
                            spec.initial = InitialAge::Fresh;
                        else if (t == "equilibrium" || t == "equilibrium_residual")
                            spec.initial = InitialAge::EquilibriumResidual;
                        else
                            throw ConfigError("initial must be fresh or equilibrium");
                    } else
                        throw unknown();
                } else if (sec.name != "manifest") {
                    throw ConfigError("unknown section [" + sec.name + "]" + where);
                }
            } catch (const ConfigError& err) {
                const std::string msg = err.what();
                if (msg.find("(line ") != std::string::npos)
                    throw;
                throw ConfigError(msg + where);
            }
        }
    }
    if (!scenario)
        throw ConfigError("spec is missing 'scenario'");
    spec.scenario = *scenario;
    if (!models_set)
        throw ConfigError("spec is missing [system] models");
    if (!variants_set)
        spec.variants = detail::default_variants(spec.scenario);
    spec.validate();
    return spec;
}

inline ExperimentSpec load_experiment(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw ConfigError("cannot read spec file '" + path.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return experiment_from_spec(parse_spec_text(ss.str()), path.stem().string());
}

/// The spec in canonical form; parsing it back gives an identical spec.
inline std::string render_spec(const ExperimentSpec& s)
{
    std::ostringstream os;
    os << "name = " << s.name << "\nscenario = " << to_string(s.scenario) << '\n';
    if (!s.output.empty())
        os << "output = " << s.output << '\n';
    os << "\n[system]\nN = " << s.N << "\nd = ";
    for (std::size_t i = 0; i < s.d_values.size(); ++i)
        os << (i ? ", " : "") << s.d_values[i];
    os << "\ndep = " << s.dep.spec() << "\nmodels = ";
    for (std::size_t i = 0; i < s.models.size(); ++i)
        os << (i ? ", " : "") << s.models[i].name;
    os << "\nvariants = ";
    for (std::size_t i = 0; i < s.variants.size(); ++i)
        os << (i ? ", " : "") << to_string(s.variants[i]);
    os << '\n' << (s.uses_rho_tilde() ? "rho_tilde = " : "lambda = ") << join_numbers(s.grid());
    os << "\n\n[run]\nreplications = " << s.replications << "\narrivals = " << s.arrivals << '\n';
    if (s.warmup)
        os << "warmup = " << format_number(*s.warmup) << '\n';
    os << "seed = " << s.seed << '\n';
    if (s.scenario == Scenario::FluidRun) {
        os << "\n[fluid]\nq0 = " << format_number(s.q0) << "\nstep = " << format_number(s.step)
           << "\nhorizon = " << format_number(s.horizon) << "\nwindow = " << format_number(s.window)
           << "\nepsilon = " << format_number(s.epsilon) << "\nmode = " << to_string(s.mode)
           << "\ninitial = "
           << (s.initial == InitialAge::Fresh ? "fresh" : "equilibrium") << '\n';
    }
    return os.str();
}

/// E[min] and loads for one cell; models without a closed form fall back to
/// a seeded Monte-Carlo estimate.
inline LoadReport cell_loads(std::size_t N, std::size_t d, double lambda, const JobSizeModel& m,
                             const DependenceModel& dep)
{
    try {
        return load_report(N, d, lambda, m, dep);
    } catch (const UnsupportedCombination&) {
        return load_report(N, d, lambda, m, dep, MonteCarlo{1'000'000, 7});
    }
}

struct CellRow {
    std::string model;
    std::string dep;
    std::size_t N = 0, d = 0;
    double lambda = 0.0, rho = 0.0, rho_tilde = 0.0;
    Variant variant = Variant::Original;
    std::optional<double> mean_latency;
    std::optional<double> ci_halfwidth;
    std::uint64_t n_jobs = 0;
    std::size_t replications = 0;
    std::optional<double> replica_mean_latency; // FullyServed only
    std::optional<double> replica_ci_halfwidth;
    std::optional<double> fully_served_analytic; // E[X] / (1 - d lambda E[X] / N)
    std::optional<std::uint64_t> ordering_violations; // against the next variant up
    std::uint64_t seed = 0;
    std::string status; // ok | high-variance | unstable

    std::optional<double> ci_lo() const
    {
        if (!mean_latency || !ci_halfwidth)
            return std::nullopt;
        return *mean_latency - *ci_halfwidth;
    }
    std::optional<double> ci_hi() const
    {
        if (!mean_latency || !ci_halfwidth)
            return std::nullopt;
        return *mean_latency + *ci_halfwidth;
    }
};

/// Cell CSV: model, dep, N, d, lambda, rho, rho_tilde, variant, mean_latency,
/// ci_halfwidth, ci_lo, ci_hi, n_jobs, replications, replica_mean_latency,
/// replica_ci_halfwidth, fully_served_analytic, ordering_violations, seed,
/// status
inline void write_cells(std::ostream& os, std::span<const CellRow> rows)
{
    CsvWriter w(os);
    w.header({"model", "dep", "N", "d", "lambda", "rho", "rho_tilde", "variant", "mean_latency",
              "ci_halfwidth", "ci_lo", "ci_hi", "n_jobs", "replications", "replica_mean_latency",
              "replica_ci_halfwidth", "fully_served_analytic", "ordering_violations", "seed",
              "status"});
    for (const auto& r : rows) {
        w << r.model << r.dep << static_cast<std::uint64_t>(r.N) << static_cast<std::uint64_t>(r.d)
          << r.lambda << r.rho << r.rho_tilde << to_string(r.variant) << r.mean_latency
          << r.ci_halfwidth << r.ci_lo() << r.ci_hi() << r.n_jobs
          << static_cast<std::uint64_t>(r.replications) << r.replica_mean_latency
          << r.replica_ci_halfwidth << r.fully_served_analytic;
        if (r.ordering_violations)
            w << *r.ordering_violations;
        else
            w << "";
        w << r.seed << r.status;
        w.end_row();
    }
}

struct ExperimentResult {
    ExperimentSpec spec;
    std::vector<CellRow> cells;
    std::optional<ThresholdEstimate> threshold;
    std::optional<FluidPath> fluid;
    std::vector<FluidSummaryRow> fluid_summary;
    std::vector<std::pair<std::string, std::string>> summary; // manifest extras
    std::vector<std::filesystem::path> files;
};

namespace detail {

struct CellPlan {
    NamedModel model;
    std::size_t d = 0;
    LoadReport loads;
    std::uint64_t seed = 0;
};

struct ReplicationOutcome {
    std::vector<double> means, replica_means;
    std::vector<std::uint64_t> jobs;
    std::vector<std::uint64_t> violations;
    bool capped = false;
};

inline std::vector<CellPlan> plan_cells(const ExperimentSpec& s)
{
    std::vector<CellPlan> plan;
    for (const auto& m : s.models)
        for (auto d : s.d_values)
            for (double x : s.grid()) {
                double lambda = x;
                if (s.uses_rho_tilde()) {
                    const auto probe = cell_loads(s.N, d, 1.0, m.model, s.dep);
                    lambda = x / probe.rho_tilde;
                }
                CellPlan c{m, d, cell_loads(s.N, d, lambda, m.model, s.dep), 0};
                c.seed = derive_seed(s.seed, plan.size());
                plan.push_back(std::move(c));
            }
    return plan;
}

inline bool variant_simulable(Variant v, const LoadReport& r)
{
    if (r.rho_tilde >= 1.0)
        return false;
    if (v == Variant::FullyServed)
        return static_cast<double>(r.d) * r.rho < 1.0;
    return true;
}

inline std::optional<std::size_t> next_up(std::span<const Variant> vs, std::size_t i)
{
    static constexpr Variant chain[] = {Variant::LowerBound, Variant::Original, Variant::UpperBound};
    auto rank = [](Variant v) -> int {
        for (int k = 0; k < 3; ++k)
            if (chain[k] == v)
                return k;
        return -1;
    };
    const int r = rank(vs[i]);
    if (r < 0)
        return std::nullopt;
    std::optional<std::size_t> best;
    for (std::size_t j = 0; j < vs.size(); ++j) {
        const int rj = rank(vs[j]);
        if (rj > r && (!best || rj < rank(vs[*best])))
            best = j;
    }
    return best;
}

inline std::vector<CellRow> run_latency_cells(const ExperimentSpec& s)
{
    const auto plan = plan_cells(s);
    const std::size_t reps = s.replications;
    const auto& vs = s.variants;
    std::vector<ReplicationOutcome> outcomes(plan.size() * reps);
    std::vector<std::vector<std::size_t>> active(plan.size());
    for (std::size_t c = 0; c < plan.size(); ++c)
        for (std::size_t i = 0; i < vs.size(); ++i)
            if (variant_simulable(vs[i], plan[c].loads))
                active[c].push_back(i);

    parallel_for(
        outcomes.size(),
        [&](std::size_t job) {
            const std::size_t c = job / reps, r = job % reps;
            if (active[c].empty())
                return;
            const auto& cell = plan[c];
            std::vector<SystemConfig> cfgs;
            std::vector<Variant> run_vs;
            for (auto i : active[c]) {
                SystemConfig cfg;
                cfg.N = s.N;
                cfg.d = cell.d;
                cfg.lambda = cell.loads.lambda;
                cfg.model = cell.model.model;
                cfg.dep = s.dep;
                cfg.variant = vs[i];
                cfg.horizon = Horizon::arrivals_count(s.arrivals);
                if (s.warmup)
                    cfg.warmup = static_cast<std::uint64_t>(*s.warmup * static_cast<double>(s.arrivals));
                cfg.seed = derive_seed(cell.seed, r);
                cfg.trajectory_rows = 2;
                cfgs.push_back(cfg);
                run_vs.push_back(vs[i]);
            }
            const auto recs = run_coupled(cfgs);
            auto& out = outcomes[job];
            out.capped = recs.front().capped;
            for (std::size_t k = 0; k < recs.size(); ++k) {
                const auto& rec = recs[k];
                out.means.push_back(rec.latencies.empty() ? std::nan("") : rec.mean_latency());
                out.jobs.push_back(rec.latencies.size());
                double rm = std::nan("");
                if (!rec.replica_latencies.empty()) {
                    rm = 0.0;
                    for (double x : rec.replica_latencies)
                        rm += x;
                    rm /= static_cast<double>(rec.replica_latencies.size());
                }
                out.replica_means.push_back(rm);
                const auto up = next_up(run_vs, k);
                out.violations.push_back(up ? latency_order_violations(rec, recs[*up]) : 0);
            }
        },
        s.threads);

    std::vector<CellRow> rows;
    for (std::size_t c = 0; c < plan.size(); ++c) {
        const auto& cell = plan[c];
        const auto& L = cell.loads;
        bool capped = false;
        for (std::size_t r = 0; r < reps; ++r)
            capped = capped || outcomes[c * reps + r].capped;
        for (std::size_t i = 0; i < vs.size(); ++i) {
            CellRow row;
            row.model = cell.model.name;
            row.dep = s.dep.spec();
            row.N = s.N;
            row.d = cell.d;
            row.lambda = L.lambda;
            row.rho = L.rho;
            row.rho_tilde = L.rho_tilde;
            row.variant = vs[i];
            row.seed = cell.seed;
            const double served_load = static_cast<double>(cell.d) * L.rho;
            if (served_load < 1.0)
                row.fully_served_analytic = L.mean / (1.0 - served_load);
            const auto pos = std::find(active[c].begin(), active[c].end(), i);
            if (pos == active[c].end()) {
                row.status = "unstable";
                rows.push_back(row);
                continue;
            }
            const auto k = static_cast<std::size_t>(pos - active[c].begin());
            std::vector<double> means, rmeans;
            std::uint64_t viol = 0;
            for (std::size_t r = 0; r < reps; ++r) {
                const auto& o = outcomes[c * reps + r];
                means.push_back(o.means[k]);
                rmeans.push_back(o.replica_means[k]);
                row.n_jobs += o.jobs[k];
                viol += o.violations[k];
            }
            row.replications = reps;
            auto summarize = [&](const std::vector<double>& xs, std::optional<double>& mean,
                                 std::optional<double>& hw) {
                if (std::any_of(xs.begin(), xs.end(), [](double x) { return std::isnan(x); }))
                    return;
                if (reps >= 2) {
                    const auto ci = replication_interval(xs);
                    mean = ci.mean;
                    hw = ci.half_width;
                } else {
                    mean = xs.front();
                }
            };
            summarize(means, row.mean_latency, row.ci_halfwidth);
            if (vs[i] == Variant::FullyServed)
                summarize(rmeans, row.replica_mean_latency, row.replica_ci_halfwidth);
            std::vector<Variant> run_vs;
            for (auto a : active[c])
                run_vs.push_back(vs[a]);
            if (next_up(run_vs, k))
                row.ordering_violations = viol;
            if (capped || !row.mean_latency)
                row.status = "unstable";
            else if (L.rho_tilde > high_variance_load ||
                     (vs[i] == Variant::FullyServed && served_load > high_variance_load))
                row.status = "high-variance";
            else
                row.status = "ok";
            rows.push_back(row);
        }
    }
    return rows;
}

} // namespace detail

/// Largest (max - min) / min over Original-variant means that share d and
/// the grid value, across models.
inline double max_relative_spread(std::span<const CellRow> rows)
{
    std::map<std::pair<std::size_t, double>, std::pair<double, double>> groups;
    for (const auto& r : rows) {
        if (r.variant != Variant::Original || !r.mean_latency)
            continue;
        const double key = std::round(r.rho_tilde * 1e9) / 1e9;
        auto [it, fresh] = groups.try_emplace({r.d, key}, *r.mean_latency, *r.mean_latency);
        if (!fresh) {
            it->second.first = std::min(it->second.first, *r.mean_latency);
            it->second.second = std::max(it->second.second, *r.mean_latency);
        }
    }
    double worst = 0.0;
    for (const auto& [k, mm] : groups)
        worst = std::max(worst, (mm.second - mm.first) / mm.first);
    return worst;
}

/// Runs the scenario and fills the result without touching the filesystem.
inline ExperimentResult compute_experiment(const ExperimentSpec& spec)
{
    spec.validate();
    ExperimentResult res;
    res.spec = spec;
    auto put = [&](std::string k, std::string v) { res.summary.emplace_back(std::move(k), std::move(v)); };
    const auto& model = spec.models.front().model;
    const std::size_t d = spec.d_values.front();
    switch (spec.scenario) {
    case Scenario::ThresholdSweep: {
        std::vector<double> grid(spec.grid().begin(), spec.grid().end());
        const auto probe = cell_loads(spec.N, d, 1.0, model, spec.dep);
        if (spec.uses_rho_tilde())
            for (auto& x : grid)
                x /= probe.rho_tilde;
        SystemConfig base;
        base.N = spec.N;
        base.d = d;
        base.lambda = grid.front();
        base.model = model;
        base.dep = spec.dep;
        base.variant = spec.variants.front();
        base.seed = spec.seed;
        ThresholdOptions opts;
        opts.replications = spec.replications;
        opts.arrivals = spec.arrivals;
        opts.threads = spec.threads;
        res.threshold = estimate_threshold(base, grid, opts);
        const auto& t = *res.threshold;
        put("found", t.found ? "true" : "false");
        if (t.found) {
            put("lambda_star", csv_number(t.lambda_star));
            put("lambda_star_ci_lo", csv_number(t.ci_lo));
            put("lambda_star_ci_hi", csv_number(t.ci_hi));
        }
        put("lambda_crit_fluid", csv_number(probe.lambda_crit_fluid));
        put("lambda_crit_sufficient", csv_number(probe.lambda_crit_sufficient));
        break;
    }
    case Scenario::FluidRun: {
        const double x = spec.grid().front();
        const auto probe = cell_loads(spec.N, d, 1.0, model, spec.dep);
        const double lambda = spec.uses_rho_tilde() ? x / probe.rho_tilde : x;
        auto cfg = fluid_config(spec.N, d, lambda, model, spec.dep);
        cfg.step = spec.step;
        cfg.horizon = spec.horizon;
        cfg.epsilon = spec.epsilon;
        cfg.mode = spec.mode;
        cfg.initial = spec.initial;
        cfg.q0.assign(spec.mode == FluidMode::Scalar ? 1 : cfg.classes(), spec.q0);
        res.fluid = solve_fluid(cfg);
        const double window = spec.window > 0.0 ? spec.window : spec.horizon / 4.0;
        FluidSummaryRow row{to_string(spec.mode), lambda, lambda * probe.rho_tilde,
                            probe.lambda_crit_fluid, spec.step, spec.horizon,
                            res.fluid->epsilon, classify_fluid(*res.fluid, window)};
        res.fluid_summary.push_back(row);
        put("verdict", to_string(row.verdict.kind));
        put("lambda_crit_fluid", csv_number(probe.lambda_crit_fluid));
        break;
    }
    default: {
        res.cells = detail::run_latency_cells(spec);
        std::uint64_t viol = 0, unstable = 0, high = 0;
        for (const auto& r : res.cells) {
            viol += r.ordering_violations.value_or(0);
            unstable += r.status == "unstable";
            high += r.status == "high-variance";
        }
        put("cells", std::to_string(res.cells.size()));
        put("unstable_cells", std::to_string(unstable));
        put("high_variance_cells", std::to_string(high));
        put("ordering_violations", std::to_string(viol));
        if (spec.scenario == Scenario::NearInsensitivity)
            put("max_relative_spread", csv_number(max_relative_spread(res.cells)));
        if (spec.scenario == Scenario::BoundComparison) {
            std::uint64_t matched = 0, checked = 0;
            for (const auto& r : res.cells)
                if (r.variant == Variant::FullyServed && r.replica_mean_latency &&
                    r.replica_ci_halfwidth && r.fully_served_analytic) {
                    ++checked;
                    matched += std::abs(*r.replica_mean_latency - *r.fully_served_analytic) <=
                               3.0 * *r.replica_ci_halfwidth;
                }
            put("fully_served_cells_checked", std::to_string(checked));
            put("fully_served_cells_within_3_halfwidths", std::to_string(matched));
        }
        break;
    }
    }
    return res;
}

inline void write_manifest(std::ostream& os, const ExperimentResult& res, double wall_seconds)
{
    os << render_spec(res.spec) << "\n[manifest]\n";
    os << "version = " << toolkit_version << '\n';
    os << "wall_time_seconds = " << csv_number(wall_seconds) << '\n';
    os << "base_seed = " << res.spec.seed << '\n';
    switch (res.spec.scenario) {
    case Scenario::ThresholdSweep:
        os << "seed_rule = derive_seed(base_seed, point * 100003 + replication)\n";
        os << "drift_method = least-squares slope of total queue length over the trailing half\n";
        os << "verdict_rule = 95% normal interval of the drift across replications\n";
        break;
    case Scenario::FluidRun:
        os << "scheme = explicit first-order step with trapezoidal arrival integral\n";
        break;
    default:
        os << "seed_rule = derive_seed(derive_seed(base_seed, cell), replication); cell seed in CSV\n";
        os << "coupling = variants of a cell share arrivals, server choices and replica sizes\n";
        os << "warmup_fraction = " << format_number(res.spec.warmup.value_or(0.1)) << '\n';
        os << "drain = measured jobs run to completion, at most one extra horizon of arrivals\n";
        os << "ci_method = normal 95% interval across replication means\n";
        os << "high_variance_rho_tilde = " << format_number(high_variance_load) << '\n';
        os << "ordering_tolerance = 1e-9\n";
        os << "unstable_rule = rho_tilde >= 1 (or d*rho >= 1 for fully_served) is not simulated; "
              "a drain that hits its cap marks the cell unstable\n";
        if (res.spec.scenario == Scenario::NearInsensitivity)
            os << "near_insensitivity_tolerance = 0.05\n";
        break;
    }
    for (const auto& [k, v] : res.summary)
        os << k << " = " << v << '\n';
}

/// Runs the experiment and writes `<name>.csv` (plus `<name>_summary.csv`
/// for fluid runs) and `<name>_manifest.txt` under out_root / output.
inline ExperimentResult run_experiment(const ExperimentSpec& spec,
                                       const std::filesystem::path& out_root)
{
    const auto start = std::chrono::steady_clock::now();
    auto res = compute_experiment(spec);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto dir = spec.output.empty() ? out_root : out_root / spec.output;
    std::filesystem::create_directories(dir);
    const auto main_csv = dir / (spec.name + ".csv");
    {
        auto os = open_output(main_csv.string());
        if (res.threshold)
            write_threshold(os, *res.threshold);
        else if (res.fluid)
            write_fluid(os, *res.fluid);
        else
            write_cells(os, res.cells);
    }
    res.files.push_back(main_csv);
    if (res.fluid) {
        const auto p = dir / (spec.name + "_summary.csv");
        auto os = open_output(p.string());
        write_fluid_summary(os, res.fluid_summary);
        res.files.push_back(p);
    }
    const auto manifest = dir / (spec.name + "_manifest.txt");
    {
        auto os = open_output(manifest.string());
        write_manifest(os, res, wall);
    }
    res.files.push_back(manifest);
    return res;
}

} // namespace redund
