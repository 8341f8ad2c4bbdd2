#pragma once

// Declarative studies: sectioned INI configs with a closed key schema, the
// fluctuation-scaling sweep with its i.i.d. baseline, certificate tables,
// kernel diagnostics, the inequality audit, and CSV/SVG/JSON reports.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "audit.hpp"
#include "diagnostics.hpp"
#include "equilibrium.hpp"
#include "errors.hpp"
#include "groundstate.hpp"
#include "io.hpp"
#include "kernel.hpp"
#include "observables.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "system.hpp"

namespace coulomb {

inline constexpr int exit_pass = 0;
inline constexpr int exit_failure = 1;
inline constexpr int exit_unconverged = 2;
inline constexpr int exit_violation = 3;
inline constexpr int exit_config = 4;

inline constexpr std::string_view scaling_schema = "coulomb-scaling v1";
inline constexpr std::string_view certificate_schema = "coulomb-certificate v1";
inline constexpr std::string_view kernel_check_schema = "coulomb-kernel-check v1";
inline constexpr std::string_view audit_schema = "coulomb-audit v1";
inline constexpr std::string_view zeta_moment_schema = "coulomb-zeta-moment v1";

enum class ExperimentKind { kernel_check, sample, ground_state, sweep, analyze };

inline const char* to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::kernel_check: return "kernel-check";
        case ExperimentKind::sample: return "sample";
        case ExperimentKind::ground_state: return "ground-state";
        case ExperimentKind::sweep: return "sweep";
        case ExperimentKind::analyze: return "analyze";
    }
    return "?";
}

inline ExperimentKind parse_kind(std::string_view s) {
    for (auto k : {ExperimentKind::kernel_check, ExperimentKind::sample, ExperimentKind::ground_state, ExperimentKind::sweep,
                   ExperimentKind::analyze})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown experiment kind: " + std::string(s));
}

inline Domain parse_domain(std::string_view s) {
    if (s == "torus") return Domain::torus;
    if (s == "euclidean") return Domain::euclidean;
    throw ConfigError("unknown domain: " + std::string(s));
}

struct ExperimentSpec {
    std::optional<ExperimentKind> kind;
    Domain domain = Domain::torus;
    int dimension = 3;
    std::uint64_t seed = 1;
    std::string out = "out";

    std::vector<std::size_t> ns;
    double beta = 1.0;
    double beta_exponent = 0.0;  // beta_N = beta * N^beta_exponent

    RunOptions run{2000, 200, 1};
    std::size_t chains = 4;
    double rhat_limit = 1.1;

    std::vector<std::string> observables;  // empty: the domain default
    int grid = 24;

    std::size_t baseline_sets = 10000;

    double alpha = 6.0;
    int table_resolution = 64;

    std::size_t gs_seeds = 4;
    std::uint64_t gs_budget = 0;
    std::uint64_t gs_descent_budget = 0;
    bool gs_optimize = false;  // sweeps only; ground-state runs always optimize
    bool certify = true;

    bool audit = false;
    int audit_grid = 24;
    int audit_lebesgue_grid = 32;
    std::size_t audit_chains = 1;
    RunOptions audit_run{20000, 1000, 20};

    std::string input;  // analyze

    double beta_at(std::size_t n) const { return beta * std::pow(static_cast<double>(n), beta_exponent); }

    std::vector<std::string> observable_names() const {
        if (!observables.empty()) return observables;
        return {domain == Domain::torus ? "cos:1,0,0" : "bump:0,0,0,0.3"};
    }

    AnnealOptions anneal_options() const {
        AnnealOptions a;
        a.budget = gs_budget;
        a.descent_budget = gs_descent_budget;
        return a;
    }

    std::vector<std::uint64_t> restart_seeds() const {
        std::vector<std::uint64_t> s;
        for (std::size_t k = 0; k < gs_seeds; ++k) s.push_back(seed + k);
        return s;
    }
};

namespace detail {

// Section -> accepted keys. Anything else is a hard error.
inline const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> s = {
        {"experiment", {"kind", "domain", "d", "seed", "out"}},
        {"system", {"n", "beta", "beta_exponent"}},
        {"sampler", {"sweeps", "burn_in", "thin", "chains", "refresh_every", "tune", "rhat_limit"}},
        {"observables", {"names", "grid"}},
        {"baseline", {"sets"}},
        {"kernel", {"alpha", "table_resolution"}},
        {"groundstate", {"seeds", "budget", "descent_budget", "optimize", "certify"}},
        {"audit", {"enabled", "grid", "lebesgue_grid", "chains", "sweeps", "burn_in", "thin"}},
        {"analyze", {"input"}},
    };
    return s;
}

inline std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> words(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ' ' || c == '\t') {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    std::string t = trim(text);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size() || t.empty()) {
        throw ConfigError("invalid value for " + key + ": '" + text + "'");
    }
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    std::string t = trim(text);
    if (t == "true" || t == "yes" || t == "1" || t == "on") return true;
    if (t == "false" || t == "no" || t == "0" || t == "off") return false;
    throw ConfigError("invalid boolean for " + key + ": '" + text + "'");
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text) {
    std::string t = text;
    std::replace(t.begin(), t.end(), ',', ' ');
    std::vector<std::size_t> out;
    for (const auto& w : words(t)) out.push_back(parse_number<std::size_t>(key, w));
    if (out.empty()) throw ConfigError(key + " must list at least one value");
    return out;
}

}  // namespace detail

inline void validate(const ExperimentSpec& s) {
    if (s.dimension != 3) throw UnsupportedDimensionError(s.dimension);
    for (std::size_t i = 0; i < s.ns.size(); ++i) {
        if (s.ns[i] < 1) throw ConfigError("system.n entries must be positive");
        if (i > 0 && s.ns[i] <= s.ns[i - 1]) throw ConfigError("system.n must be sorted strictly ascending");
    }
    bool needs_n = s.kind && (*s.kind == ExperimentKind::sample || *s.kind == ExperimentKind::sweep ||
                              *s.kind == ExperimentKind::ground_state);
    if (needs_n && s.ns.empty()) throw ConfigError("system.n is required");
    if (!(s.beta >= 0.0) || !std::isfinite(s.beta)) throw ConfigError("system.beta must be finite and nonnegative");
    if (!std::isfinite(s.beta_exponent)) throw ConfigError("system.beta_exponent must be finite");
    if (s.run.sweeps < 1 || s.run.thin < 1 || s.chains < 1 || s.run.refresh_every < 1) {
        throw ConfigError("sampler counts must be positive");
    }
    if (s.run.sweeps <= s.run.burn_in) throw ConfigError("sampler.sweeps must exceed sampler.burn_in");
    // Checkpoints are taken at the last sweep and resume bit-exactly only on a refresh boundary.
    if (s.run.sweeps % s.run.refresh_every != 0) throw ConfigError("sampler.sweeps must be a multiple of sampler.refresh_every");
    if (s.grid < 2 || s.audit_grid < 2 || s.audit_lebesgue_grid < 2) throw ConfigError("grid resolutions must be at least 2");
    if (s.baseline_sets < 2) throw ConfigError("baseline.sets must be at least 2");
    if (s.gs_seeds < 1) throw ConfigError("groundstate.seeds must be positive");
    if (s.audit_chains < 1 || s.audit_run.thin < 1 || s.audit_run.sweeps <= s.audit_run.burn_in) {
        throw ConfigError("audit run counts must be positive with sweeps > burn_in");
    }
    if (!(s.rhat_limit >= 1.0)) throw ConfigError("sampler.rhat_limit must be at least 1");
    if (!(s.alpha > 0.0)) throw ConfigError("kernel.alpha must be positive");
    if (s.table_resolution < 0) throw ConfigError("kernel.table_resolution must be nonnegative");
    if (s.domain == Domain::euclidean) {
        for (auto n : s.ns) {
            if (n < 2) throw ConfigError("Euclidean runs need N >= 2");
            if (s.beta_at(n) < 1.0 / static_cast<double>(n - 1)) {
                throw ConfigError("Euclidean runs need beta >= 1/(N-1); fails at N=" + std::to_string(n));
            }
        }
    }
    auto eq = EquilibriumMeasure::quadratic();
    for (const auto& name : s.observable_names()) (void)TestFunction::parse(name, s.domain, &eq);
    if (s.audit) {
        for (auto n : s.ns)
            if (n > 16) throw ConfigError("the inequality audit is limited to N <= 16");
    }
}

/// Parse a sectioned key = value config. Unknown sections or keys are errors.
inline ExperimentSpec parse_spec(std::istream& in, const std::string& source = "<config>") {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    const auto& schema = detail::config_schema();
    ExperimentSpec s;
    for (const auto& [section, body] : tree) {
        auto it = schema.find(section);
        if (it == schema.end()) {
            if (body.empty()) throw ConfigError(source + ": key outside any section: " + section);
            throw ConfigError(source + ": unknown section [" + section + "]");
        }
        for (const auto& [key, node] : body) {
            if (!it->second.count(key)) throw ConfigError(source + ": unknown key " + section + "." + key);
            const std::string full = section + "." + key;
            const std::string v = detail::trim(node.data());
            using detail::parse_bool;
            using detail::parse_number;
            if (full == "experiment.kind") s.kind = parse_kind(v);
            else if (full == "experiment.domain") s.domain = parse_domain(v);
            else if (full == "experiment.d") s.dimension = parse_number<int>(full, v);
            else if (full == "experiment.seed") s.seed = parse_number<std::uint64_t>(full, v);
            else if (full == "experiment.out") s.out = v;
            else if (full == "system.n") s.ns = detail::parse_sizes(full, v);
            else if (full == "system.beta") s.beta = parse_number<double>(full, v);
            else if (full == "system.beta_exponent") s.beta_exponent = parse_number<double>(full, v);
            else if (full == "sampler.sweeps") s.run.sweeps = parse_number<std::uint64_t>(full, v);
            else if (full == "sampler.burn_in") s.run.burn_in = parse_number<std::uint64_t>(full, v);
            else if (full == "sampler.thin") s.run.thin = parse_number<std::uint64_t>(full, v);
            else if (full == "sampler.chains") s.chains = parse_number<std::size_t>(full, v);
            else if (full == "sampler.refresh_every") s.run.refresh_every = parse_number<std::uint64_t>(full, v);
            else if (full == "sampler.tune") s.run.tune = parse_bool(full, v);
            else if (full == "sampler.rhat_limit") s.rhat_limit = parse_number<double>(full, v);
            else if (full == "observables.names") s.observables = detail::words(v);
            else if (full == "observables.grid") s.grid = parse_number<int>(full, v);
            else if (full == "baseline.sets") s.baseline_sets = parse_number<std::size_t>(full, v);
            else if (full == "kernel.alpha") s.alpha = parse_number<double>(full, v);
            else if (full == "kernel.table_resolution") s.table_resolution = parse_number<int>(full, v);
            else if (full == "groundstate.seeds") s.gs_seeds = parse_number<std::size_t>(full, v);
            else if (full == "groundstate.budget") s.gs_budget = parse_number<std::uint64_t>(full, v);
            else if (full == "groundstate.descent_budget") s.gs_descent_budget = parse_number<std::uint64_t>(full, v);
            else if (full == "groundstate.optimize") s.gs_optimize = parse_bool(full, v);
            else if (full == "groundstate.certify") s.certify = parse_bool(full, v);
            else if (full == "audit.enabled") s.audit = parse_bool(full, v);
            else if (full == "audit.grid") s.audit_grid = parse_number<int>(full, v);
            else if (full == "audit.lebesgue_grid") s.audit_lebesgue_grid = parse_number<int>(full, v);
            else if (full == "audit.chains") s.audit_chains = parse_number<std::size_t>(full, v);
            else if (full == "audit.sweeps") s.audit_run.sweeps = parse_number<std::uint64_t>(full, v);
            else if (full == "audit.burn_in") s.audit_run.burn_in = parse_number<std::uint64_t>(full, v);
            else if (full == "audit.thin") s.audit_run.thin = parse_number<std::uint64_t>(full, v);
            else if (full == "analyze.input") s.input = v;
        }
    }
    validate(s);
    return s;
}

inline ExperimentSpec load_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_spec(in, path);
}

inline std::shared_ptr<const TorusKernel> make_kernel(const ExperimentSpec& s) {
    TorusKernel::Options o;
    o.alpha = s.alpha;
    o.table_resolution = s.table_resolution;
    return std::make_shared<const TorusKernel>(o);
}

// ---------------------------------------------------------------------------
// Scaling sweep

struct ScalingRow {
    std::size_t n = 0;
    double beta = 0.0;
    double mean = 0.0;
    double std = 0.0;
    double stderr_ = 0.0;  // std / sqrt(2 ESS)
    double ess = 0.0;
    double rhat = 1.0;
    std::size_t samples = 0;
    double baseline_std = 0.0;
    double baseline_stderr = 0.0;
    double bound = std::numeric_limits<double>::quiet_NaN();  // B(N)
    double h_opt = std::numeric_limits<double>::quiet_NaN();
};

struct ScalingResult {
    std::string observable;
    std::vector<ScalingRow> rows;
    std::optional<LineFit> fit;
    std::optional<LineFit> baseline_fit;
};

struct ZetaMomentRow {
    std::size_t n = 0;
    double beta = 0.0;
    double log_moment = 0.0;  // log E[exp(beta N <zeta, mu_X> / 2)]
    double log_stderr = 0.0;
    std::size_t samples = 0;
};

/// Envelope C beta N^{4/3} + C_zeta N over the measured log-moments.
struct ZetaEnvelope {
    double c = std::numeric_limits<double>::quiet_NaN();
    double c_zeta = std::numeric_limits<double>::quiet_NaN();

    double operator()(double beta, std::size_t n) const {
        double x = static_cast<double>(n);
        return c * beta * std::pow(x, 4.0 / 3.0) + c_zeta * x;
    }
};

struct SweepResult {
    Domain domain = Domain::torus;
    std::vector<ScalingResult> per_observable;
    std::vector<ZetaMomentRow> zeta;
    ZetaEnvelope envelope;
    bool converged = true;
    double worst_rhat = 1.0;
};

/// Smallest nonnegative envelope, by total height over the measured N, that
/// lies above every log-moment plus two standard errors. A two-variable LP,
/// solved by enumerating vertices of the feasible region.
inline ZetaEnvelope fit_zeta_envelope(const std::vector<ZetaMomentRow>& rows) {
    ZetaEnvelope best;
    if (rows.empty()) return best;
    struct Line { double a, b, y; };  // a C + b D >= y
    std::vector<Line> cons;
    for (const auto& r : rows) {
        double n = static_cast<double>(r.n);
        cons.push_back({r.beta * std::pow(n, 4.0 / 3.0), n, r.log_moment + 2.0 * r.log_stderr});
    }
    std::vector<Line> all = cons;
    all.push_back({1.0, 0.0, 0.0});
    all.push_back({0.0, 1.0, 0.0});
    double oa = 0.0, ob = 0.0;
    for (const auto& c : cons) oa += c.a, ob += c.b;
    double best_obj = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            double det = all[i].a * all[j].b - all[i].b * all[j].a;
            if (std::abs(det) < 1e-300) continue;
            double C = (all[i].y * all[j].b - all[i].b * all[j].y) / det;
            double D = (all[i].a * all[j].y - all[i].y * all[j].a) / det;
            if (C < -1e-12 || D < -1e-12) continue;
            C = std::max(C, 0.0) + 0.0, D = std::max(D, 0.0) + 0.0;
            bool ok = true;
            for (const auto& c : cons) ok = ok && c.a * C + c.b * D >= c.y - 1e-9 * std::max(1.0, std::abs(c.y));
            double obj = oa * C + ob * D;
            if (ok && obj < best_obj) best_obj = obj, best.c = C, best.c_zeta = D;
        }
    return best;
}

namespace detail {

inline std::uint64_t chain_stream(std::size_t n, std::size_t c) { return (static_cast<std::uint64_t>(n) << 20) + c; }
inline std::uint64_t init_stream(std::size_t n, std::size_t c) { return (1ull << 40) | chain_stream(n, c); }
inline std::uint64_t baseline_stream(std::size_t n) { return (2ull << 40) | static_cast<std::uint64_t>(n); }

struct ChainOutput {
    ChainRun run;
    std::vector<double> zeta;
};

inline std::vector<TestFunction> parse_observables(const ExperimentSpec& s, const EquilibriumMeasure& eq) {
    std::vector<TestFunction> out;
    for (const auto& name : s.observable_names()) out.push_back(TestFunction::parse(name, s.domain, &eq));
    return out;
}

inline double pooled_mean(const std::vector<std::vector<double>>& chains) {
    double s = 0.0;
    std::size_t k = 0;
    for (const auto& c : chains)
        for (double x : c) s += x, ++k;
    return k ? s / static_cast<double>(k) : std::numeric_limits<double>::quiet_NaN();
}

inline double pooled_std(const std::vector<std::vector<double>>& chains, double mu) {
    double s = 0.0;
    std::size_t k = 0;
    for (const auto& c : chains)
        for (double x : c) s += (x - mu) * (x - mu), ++k;
    return k > 1 ? std::sqrt(s / static_cast<double>(k - 1)) : std::numeric_limits<double>::quiet_NaN();
}

inline std::optional<LineFit> log_log_fit(const std::vector<ScalingRow>& rows, bool baseline) {
    if (rows.size() < 4) return std::nullopt;
    std::vector<double> x, y, sig;
    for (const auto& r : rows) {
        double s = baseline ? r.baseline_std : r.std;
        double e = baseline ? r.baseline_stderr : r.stderr_;
        if (!(s > 0.0) || !(e > 0.0) || !std::isfinite(e)) return std::nullopt;
        x.push_back(std::log(static_cast<double>(r.n)));
        y.push_back(std::log(s));
        sig.push_back(e / s);
    }
    return weighted_line_fit(x, y, sig);
}

}  // namespace detail

/// Chains for one N of one domain, each task owning its chain. Results are
/// ordered by task id so parallelism never changes output.
template <typename Model, typename Start>
std::vector<detail::ChainOutput> run_chains(const Model& model, std::size_t n, double beta, const ExperimentSpec& s,
                                            std::span<const TestFunction> obs, unsigned threads, Start&& start,
                                            const EquilibriumMeasure* eq = nullptr) {
    std::vector<detail::ChainOutput> out(s.chains);
    parallel_for(s.chains, threads, [&](std::size_t c) {
        Rng init(s.seed, detail::init_stream(n, c));
        ChainState<Model> chain{Configuration<Model>(model, start(n, init)), beta, Rng(s.seed, detail::chain_stream(n, c)),
                                0.1};
        auto& o = out[c];
        std::function<void(const ChainState<Model>&)> hook;
        if (eq) hook = [&](const ChainState<Model>& st) { o.zeta.push_back(eq->zeta_statistic(st.config)); };
        o.run = run_chain(chain, s.run, obs, c, hook);
    });
    return out;
}

inline SweepResult run_sweep(const ExperimentSpec& s, unsigned threads = 1) {
    auto eq = EquilibriumMeasure::quadratic();
    auto obs = detail::parse_observables(s, eq);
    SweepResult res;
    res.domain = s.domain;
    for (const auto& phi : obs) res.per_observable.push_back({phi.name(), {}, {}, {}});
    std::shared_ptr<const TorusKernel> g;
    if (s.domain == Domain::torus) g = make_kernel(s);

    for (std::size_t n : s.ns) {
        const double beta = s.beta_at(n);
        std::vector<detail::ChainOutput> chains;
        if (s.domain == Domain::torus) {
            chains = run_chains(TorusModel(g), n, beta, s, obs, threads,
                                [](std::size_t k, Rng& r) { return perturbed_lattice(k, 0.5, r); });
        } else {
            chains = run_chains(quadratic_model(eq), n, beta, s, obs, threads,
                                [&](std::size_t k, Rng& r) { return uniform_ball_points(k, eq.radius(), r); }, &eq);
        }

        // Matched i.i.d. sets through the same estimator.
        std::vector<std::vector<double>> base(obs.size());
        {
            Rng r(s.seed, detail::baseline_stream(n));
            for (std::size_t k = 0; k < s.baseline_sets; ++k) {
                auto xs = s.domain == Domain::torus ? uniform_torus_points(n, r) : uniform_ball_points(n, eq.radius(), r);
                for (std::size_t o = 0; o < obs.size(); ++o) base[o].push_back(linear_statistic(xs, s.domain, obs[o]));
            }
        }

        double bound = std::numeric_limits<double>::quiet_NaN();
        double h_opt = std::numeric_limits<double>::quiet_NaN();
        auto seeds = s.restart_seeds();
        if (s.domain == Domain::torus) {
            if (s.certify) bound = certify_lower_bound(*g, n, s.grid).bound;
            if (s.gs_optimize) h_opt = minimize_torus_energy(g, n, seeds, s.anneal_options(), threads).energy;
        } else {
            if (s.certify) bound = regularized_lower_bound(eq, n);
            if (s.gs_optimize) h_opt = regularized_ground_state(eq, n, seeds, s.anneal_options(), threads).energy;
        }

        for (std::size_t o = 0; o < obs.size(); ++o) {
            std::vector<std::vector<double>> cols;
            for (const auto& c : chains) cols.push_back(trace_column(c.run.trace, o));
            auto diag = diagnose(cols);
            ScalingRow row;
            row.n = n;
            row.beta = beta;
            row.samples = diag.samples;
            row.mean = detail::pooled_mean(cols);
            row.std = detail::pooled_std(cols, row.mean);
            row.ess = diag.ess;
            row.rhat = diag.rhat;
            row.stderr_ = diag.ess > 0.0 ? row.std / std::sqrt(2.0 * diag.ess) : std::numeric_limits<double>::quiet_NaN();
            double bm = mean(base[o]);
            row.baseline_std = detail::pooled_std({base[o]}, bm);
            row.baseline_stderr = row.baseline_std / std::sqrt(2.0 * static_cast<double>(s.baseline_sets));
            row.bound = bound;
            row.h_opt = h_opt;
            res.worst_rhat = std::max(res.worst_rhat, row.rhat);
            if (!(row.rhat <= s.rhat_limit)) res.converged = false;
            res.per_observable[o].rows.push_back(row);
        }

        if (s.domain == Domain::euclidean) {
            std::vector<double> z;
            for (const auto& c : chains) z.insert(z.end(), c.zeta.begin(), c.zeta.end());
            if (z.size() >= 100) {
                auto m = exp_moment(z, 0.5 * beta * static_cast<double>(n));
                res.zeta.push_back({n, beta, m.log_value, m.log_stderr, z.size()});
            }
        }
    }
    for (auto& r : res.per_observable) {
        r.fit = detail::log_log_fit(r.rows, false);
        r.baseline_fit = detail::log_log_fit(r.rows, true);
    }
    res.envelope = fit_zeta_envelope(res.zeta);
    return res;
}

// ---------------------------------------------------------------------------
// Reports

inline constexpr double slope_ceiling = 0.45;
inline constexpr double baseline_slope_window = 0.03;

struct NamedCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

inline std::vector<NamedCheck> scaling_checks(const ScalingResult& r, bool converged) {
    std::vector<NamedCheck> c;
    bool have = r.fit.has_value() && r.baseline_fit.has_value();
    c.push_back({"fit_has_four_points", have, std::to_string(r.rows.size()) + " values of N"});
    bool bars = !r.rows.empty();
    for (const auto& row : r.rows) bars = bars && row.stderr_ > 0.0 && row.baseline_stderr > 0.0;
    c.push_back({"error_bars_positive", bars, ""});
    c.push_back({"converged", converged, ""});
    if (have) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "slope %.4f, baseline %.4f", r.fit->slope, r.baseline_fit->slope);
        c.push_back({"slope_at_most_0.45", r.fit->slope <= slope_ceiling, buf});
        c.push_back({"slope_below_baseline", r.fit->slope < r.baseline_fit->slope, buf});
        c.push_back({"baseline_slope_near_half", std::abs(r.baseline_fit->slope - 0.5) <= baseline_slope_window, buf});
    }
    return c;
}

inline void write_scaling_csv(std::ostream& out, const ScalingResult& r) {
    out << scaling_schema << '\n' << "N,mean,std,stderr,ESS,slope,slope_ci_lo,slope_ci_hi,baseline_slope,B(N),H_opt\n";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    double slope = r.fit ? r.fit->slope : nan, lo = r.fit ? r.fit->ci_lo : nan, hi = r.fit ? r.fit->ci_hi : nan;
    double bs = r.baseline_fit ? r.baseline_fit->slope : nan;
    for (const auto& row : r.rows) {
        out << row.n << ',' << format_double(row.mean) << ',' << format_double(row.std) << ',' << format_double(row.stderr_)
            << ',' << format_double(row.ess) << ',' << format_double(slope) << ',' << format_double(lo) << ','
            << format_double(hi) << ',' << format_double(bs) << ',' << format_double(row.bound) << ','
            << format_double(row.h_opt) << '\n';
    }
}

namespace detail {

inline std::string fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace detail

/// Log-log plot: Coulomb std with error bars, the i.i.d. baseline, both
/// fits, and a slope-1/3 reference through the first Coulomb point.
inline void write_scaling_svg(std::ostream& out, const ScalingResult& r) {
    const double W = 640, H = 480, L = 70, Rm = 20, T = 40, B = 60;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\">\n";
    out << "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
    out << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">std of "
        << r.observable << " vs N</text>\n";
    if (r.rows.empty()) {
        out << "<text x=\"320\" y=\"240\" text-anchor=\"middle\" font-family=\"sans-serif\">NO DATA</text>\n</svg>\n";
        return;
    }
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& row : r.rows) {
        double x = std::log10(static_cast<double>(row.n));
        x0 = std::min(x0, x), x1 = std::max(x1, x);
        for (double v : {row.std - row.stderr_, row.std + row.stderr_, row.baseline_std}) {
            if (v > 0.0 && std::isfinite(v)) y0 = std::min(y0, std::log10(v)), y1 = std::max(y1, std::log10(v));
        }
    }
    if (!(y1 > y0)) y0 -= 0.5, y1 += 0.5;
    if (!(x1 > x0)) x0 -= 0.5, x1 += 0.5;
    double px = 0.05 * (x1 - x0), py = 0.08 * (y1 - y0);
    x0 -= px, x1 += px, y0 -= py, y1 += py;
    auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - Rm); };
    auto sy = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    using detail::fixed;
    out << "<line x1=\"" << fixed(L) << "\" y1=\"" << fixed(H - B) << "\" x2=\"" << fixed(W - Rm) << "\" y2=\"" << fixed(H - B)
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << fixed(L) << "\" y1=\"" << fixed(T) << "\" x2=\"" << fixed(L) << "\" y2=\"" << fixed(H - B)
        << "\" stroke=\"black\"/>\n";
    for (const auto& row : r.rows) {
        double x = sx(std::log10(static_cast<double>(row.n)));
        out << "<text x=\"" << fixed(x) << "\" y=\"" << fixed(H - B + 18)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << row.n << "</text>\n";
    }
    for (int k = 0; k <= 4; ++k) {
        double y = y0 + (y1 - y0) * k / 4.0;
        char lab[32];
        std::snprintf(lab, sizeof lab, "%.3g", std::pow(10.0, y));
        out << "<text x=\"" << fixed(L - 6) << "\" y=\"" << fixed(sy(y) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << lab << "</text>\n";
    }
    out << "<text x=\"" << fixed((L + W - Rm) / 2) << "\" y=\"" << fixed(H - 16)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">N (log scale)</text>\n";
    auto line = [&](double a, double b, const char* color, const char* dash) {
        // log std = a + b log N, drawn in base-10 coordinates.
        double la = a / std::log(10.0);
        out << "<line x1=\"" << fixed(sx(x0)) << "\" y1=\"" << fixed(sy(la + b * x0)) << "\" x2=\"" << fixed(sx(x1))
            << "\" y2=\"" << fixed(sy(la + b * x1)) << "\" stroke=\"" << color << "\" stroke-dasharray=\"" << dash
            << "\"/>\n";
    };
    out << "<clipPath id=\"plot\"><rect x=\"" << fixed(L) << "\" y=\"" << fixed(T) << "\" width=\"" << fixed(W - L - Rm)
        << "\" height=\"" << fixed(H - T - B) << "\"/></clipPath>\n<g clip-path=\"url(#plot)\">\n";
    if (r.fit) line(r.fit->intercept, r.fit->slope, "#1f5fbf", "none");
    if (r.baseline_fit) line(r.baseline_fit->intercept, r.baseline_fit->slope, "#777777", "6,4");
    {
        const auto& f = r.rows.front();
        double a = std::log(f.std) - std::log(static_cast<double>(f.n)) / 3.0;
        if (std::isfinite(a)) line(a, 1.0 / 3.0, "#c03030", "2,3");
    }
    out << "</g>\n";
    for (const auto& row : r.rows) {
        double x = sx(std::log10(static_cast<double>(row.n)));
        if (row.std > 0.0) {
            double lo = row.std - row.stderr_, hi = row.std + row.stderr_;
            if (lo > 0.0 && std::isfinite(hi)) {
                out << "<line x1=\"" << fixed(x) << "\" y1=\"" << fixed(sy(std::log10(lo))) << "\" x2=\"" << fixed(x)
                    << "\" y2=\"" << fixed(sy(std::log10(hi))) << "\" stroke=\"#1f5fbf\"/>\n";
            }
            out << "<circle cx=\"" << fixed(x) << "\" cy=\"" << fixed(sy(std::log10(row.std)))
                << "\" r=\"4\" fill=\"#1f5fbf\"/>\n";
        }
        if (row.baseline_std > 0.0) {
            out << "<rect x=\"" << fixed(x - 3.5) << "\" y=\"" << fixed(sy(std::log10(row.baseline_std)) - 3.5)
                << "\" width=\"7\" height=\"7\" fill=\"#777777\"/>\n";
        }
    }
    auto legend = [&](int k, const char* color, const std::string& text) {
        double y = T + 14 + 16 * k;
        out << "<line x1=\"" << fixed(L + 12) << "\" y1=\"" << fixed(y - 4) << "\" x2=\"" << fixed(L + 32) << "\" y2=\""
            << fixed(y - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << fixed(L + 38) << "\" y=\"" << fixed(y) << "\" font-family=\"sans-serif\" font-size=\"11\">"
            << text << "</text>\n";
    };
    legend(0, "#1f5fbf", r.fit ? "Coulomb gas, slope " + fixed(r.fit->slope, 3) : "Coulomb gas");
    legend(1, "#777777", r.baseline_fit ? "i.i.d. baseline, slope " + fixed(r.baseline_fit->slope, 3) : "i.i.d. baseline");
    legend(2, "#c03030", "reference slope 1/3");
    out << "</svg>\n";
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    return f;
}

inline void ensure_dir(const std::filesystem::path& p) {
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec) throw IoError("cannot create output directory " + p.string() + ": " + ec.message());
}

inline nlohmann::ordered_json checks_json(const std::vector<NamedCheck>& checks) {
    auto a = nlohmann::ordered_json::array();
    for (const auto& c : checks) a.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    return a;
}

inline double json_number(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace detail

struct Report {
    std::vector<std::string> files;
    bool no_data = false;
    int exit_code = exit_pass;
    std::string message;
};

/// scaling-<observable>.csv and .svg per observable, zeta-moment.csv for the
/// Euclidean domain, and summary.json.
inline Report emit_report(const SweepResult& res, const ExperimentSpec& s, const std::filesystem::path& dir) {
    detail::ensure_dir(dir);
    Report rep;
    nlohmann::ordered_json summary;
    summary["schema"] = "coulomb-summary v1";
    summary["kind"] = "sweep";
    summary["domain"] = to_string(s.domain);
    summary["seed"] = s.seed;
    rep.no_data = true;
    for (const auto& r : res.per_observable)
        if (!r.rows.empty()) rep.no_data = false;
    summary["status"] = rep.no_data ? "NO DATA" : (res.converged ? "OK" : "UNCONVERGED");
    summary["worst_rhat"] = detail::json_number(res.worst_rhat);
    auto obs_json = nlohmann::ordered_json::array();
    for (const auto& r : res.per_observable) {
        std::string stem = "scaling-" + file_label(r.observable);
        {
            auto f = detail::open_out(dir / (stem + ".csv"));
            write_scaling_csv(f, r);
            rep.files.push_back((dir / (stem + ".csv")).string());
        }
        {
            auto f = detail::open_out(dir / (stem + ".svg"));
            write_scaling_svg(f, r);
            rep.files.push_back((dir / (stem + ".svg")).string());
        }
        nlohmann::ordered_json o;
        o["observable"] = r.observable;
        o["csv"] = stem + ".csv";
        if (r.fit) o["slope"] = {r.fit->slope, r.fit->ci_lo, r.fit->ci_hi};
        if (r.baseline_fit) o["baseline_slope"] = {r.baseline_fit->slope, r.baseline_fit->ci_lo, r.baseline_fit->ci_hi};
        auto rows = nlohmann::ordered_json::array();
        for (const auto& row : r.rows)
            rows.push_back({{"N", row.n}, {"beta", row.beta}, {"ess", detail::json_number(row.ess)},
                            {"rhat", detail::json_number(row.rhat)}, {"samples", row.samples}});
        o["rows"] = rows;
        o["checks"] = detail::checks_json(scaling_checks(r, res.converged));
        obs_json.push_back(o);
    }
    summary["observables"] = obs_json;
    if (s.domain == Domain::euclidean) {
        auto f = detail::open_out(dir / "zeta-moment.csv");
        f << zeta_moment_schema << '\n' << "N,beta,log_moment,log_stderr,samples,envelope\n";
        for (const auto& z : res.zeta) {
            double env = res.envelope(z.beta, z.n);
            f << z.n << ',' << format_double(z.beta) << ',' << format_double(z.log_moment) << ','
              << format_double(z.log_stderr) << ',' << z.samples << ',' << format_double(env) << '\n';
        }
        rep.files.push_back((dir / "zeta-moment.csv").string());
        summary["zeta_envelope"] = {{"C", detail::json_number(res.envelope.c)},
                                    {"C_zeta", detail::json_number(res.envelope.c_zeta)}};
    }
    {
        auto f = detail::open_out(dir / "summary.json");
        f << summary.dump(2) << '\n';
        rep.files.push_back((dir / "summary.json").string());
    }
    if (rep.no_data) {
        rep.message = "NO DATA";
    } else if (!res.converged) {
        rep.exit_code = exit_unconverged;
        rep.message = "UNCONVERGED: split-chain statistic " + detail::fixed(res.worst_rhat, 3) + " exceeds " +
                      detail::fixed(s.rhat_limit, 3);
    } else {
        rep.message = "OK";
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Analyze

struct AnalyzeResult {
    std::size_t rows = 0;
    double reported_slope = std::numeric_limits<double>::quiet_NaN();
    double refit_slope = std::numeric_limits<double>::quiet_NaN();
    double reported_baseline_slope = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> ns;
    std::vector<double> stds;
    std::vector<double> stderrs;
};

/// Re-read a scaling CSV and refit its slope from the per-N columns.
inline AnalyzeResult analyze_scaling(std::istream& in, const std::string& name = "<scaling>") {
    LineReader r(in, name);
    r.expect(scaling_schema);
    r.expect("N,mean,std,stderr,ESS,slope,slope_ci_lo,slope_ci_hi,baseline_slope,B(N),H_opt");
    AnalyzeResult a;
    std::string line;
    std::vector<ScalingRow> rows;
    while (r.next(line)) {
        if (line.empty()) continue;
        auto f = split_csv(line);
        if (f.size() != 11) throw r.error("expected 11 fields");
        ScalingRow row;
        row.n = static_cast<std::size_t>(parse_u64(f[0]));
        row.std = parse_double(f[2]);
        row.stderr_ = parse_double(f[3]);
        a.reported_slope = parse_double(f[5]);
        a.reported_baseline_slope = parse_double(f[8]);
        a.ns.push_back(row.n);
        a.stds.push_back(row.std);
        a.stderrs.push_back(row.stderr_);
        rows.push_back(row);
    }
    a.rows = rows.size();
    if (auto fit = detail::log_log_fit(rows, false)) a.refit_slope = fit->slope;
    return a;
}

inline AnalyzeResult analyze_scaling_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return analyze_scaling(in, path);
}

/// (d, R, rho, normalization constant, sup |zeta - V|) plus a grid check of
/// the last figure over |x| <= 5.
inline std::string equilibrium_summary(const EquilibriumMeasure& eq) {
    double grid_sup = 0.0;
    const int n = 20001;
    for (int i = 0; i < n; ++i) {
        double s = 5.0 * i / (n - 1);
        double v = 0.5 * s * s + eq.potential_shift();
        grid_sup = std::max(grid_sup, std::abs(eq.zeta_radial(s) - v));
    }
    std::ostringstream o;
    o.precision(17);
    o << "d=" << eq.dimension() << " R=" << eq.radius() << " rho=" << eq.density() << " shift=" << eq.potential_shift()
      << " sup|zeta-V|=" << eq.zeta_minus_potential_sup() << " (grid over |x|<=5: " << grid_sup << ")";
    return o.str();
}

// ---------------------------------------------------------------------------
// Kernel diagnostics

struct KernelCheck {
    std::size_t points = 0;
    double h = 1.0 / 64.0;
    double fd_max_error = 0.0;      // 6th-order stencil
    double fd2_max_error = 0.0;     // 2nd-order stencil at h
    double fd2_half_max_error = 0.0;// 2nd-order stencil at h/2
    double alpha_max_diff = 0.0;    // over alpha in {4, 6, 8}
    int grid = 0;
    double grid_mean = 0.0;
    double table_max_error = 0.0;
    double m_pot = 0.0;

    double fd2_order() const { return std::log2(fd2_max_error / fd2_half_max_error); }
    bool pass() const { return fd_max_error <= 1e-3 && alpha_max_diff <= 1e-10 && std::abs(grid_mean) <= 5e-3; }
};

namespace detail {

// Laplacian by central differences along each axis.
template <typename F>
double fd_laplacian(const F& f, const Vec3& x, double h, int order) {
    static constexpr double c2[] = {-2.0, 1.0};
    static constexpr double c6[] = {-49.0 / 18.0, 1.5, -3.0 / 20.0, 1.0 / 90.0};
    const double* c = order == 6 ? c6 : c2;
    int m = order == 6 ? 3 : 1;
    double s = 3.0 * c[0] * f(x);
    for (int axis = 0; axis < 3; ++axis)
        for (int k = 1; k <= m; ++k) {
            Vec3 p = x, q = x;
            p[axis] += k * h;
            q[axis] -= k * h;
            s += c[k] * (f(p) + f(q));
        }
    return s / (h * h);
}

}  // namespace detail

inline KernelCheck kernel_check(const TorusKernel& g, std::uint64_t seed, std::size_t points = 200, int grid = 24) {
    KernelCheck k;
    k.points = points;
    k.grid = grid;
    k.m_pot = g.m_pot();
    Rng rng(seed, 7);
    std::vector<Vec3> xs;
    while (xs.size() < points) {
        Vec3 x{rng.uniform(), rng.uniform(), rng.uniform()};
        if (torus_distance(x, Vec3{0.0, 0.0, 0.0}) > 0.2) xs.push_back(x);
    }
    auto direct = [&](const Vec3& x) { return g.eval_direct(x); };
    EwaldSum e4(4.0), e6(6.0), e8(8.0);
    for (const auto& x : xs) {
        k.fd_max_error = std::max(k.fd_max_error, std::abs(detail::fd_laplacian(direct, x, k.h, 6) - 1.0));
        k.fd2_max_error = std::max(k.fd2_max_error, std::abs(detail::fd_laplacian(direct, x, k.h, 2) - 1.0));
        k.fd2_half_max_error = std::max(k.fd2_half_max_error, std::abs(detail::fd_laplacian(direct, x, 0.5 * k.h, 2) - 1.0));
        double v6 = e6.value(x);
        k.alpha_max_diff = std::max({k.alpha_max_diff, std::abs(e4.value(x) - v6), std::abs(e8.value(x) - v6)});
        k.table_max_error = std::max(k.table_max_error, std::abs(g(x) - g.eval_direct(x)));
    }
    double s = 0.0;
    for (int a = 0; a < grid; ++a)
        for (int b = 0; b < grid; ++b)
            for (int c = 0; c < grid; ++c) s += g(Vec3{(a + 0.5) / grid, (b + 0.5) / grid, (c + 0.5) / grid});
    k.grid_mean = s / (static_cast<double>(grid) * grid * grid);
    return k;
}

inline void write_kernel_check(std::ostream& out, const KernelCheck& k) {
    out << kernel_check_schema << '\n'
        << "points,h,fd_max_error,fd2_max_error,fd2_order,alpha_max_diff,grid,grid_mean,table_max_error,m_pot,pass\n"
        << k.points << ',' << format_double(k.h) << ',' << format_double(k.fd_max_error) << ','
        << format_double(k.fd2_max_error) << ',' << format_double(k.fd2_order()) << ',' << format_double(k.alpha_max_diff)
        << ',' << k.grid << ',' << format_double(k.grid_mean) << ',' << format_double(k.table_max_error) << ','
        << format_double(k.m_pot) << ',' << (k.pass() ? "true" : "false") << '\n';
}

// ---------------------------------------------------------------------------
// Ground-state certificates

struct CertificateRow {
    std::size_t n = 0;
    double r = std::numeric_limits<double>::quiet_NaN();
    double self_energy = std::numeric_limits<double>::quiet_NaN();
    double c_sub = std::numeric_limits<double>::quiet_NaN();
    double bound = 0.0;
    double h_opt = 0.0;
    bool budget_exhausted = false;
    std::vector<Vec3> minimizer;

    double scaled_bound() const { return bound / std::pow(static_cast<double>(n), 4.0 / 3.0); }
    double scaled_h_opt() const { return h_opt / std::pow(static_cast<double>(n), 4.0 / 3.0); }
};

/// Torus: numerical certificate B(N) and the annealed H_opt. Euclidean: the
/// analytic bound on H - N<zeta, mu_X> and its annealed minimum.
inline CertificateRow ground_state_row(const ExperimentSpec& s, std::size_t n, unsigned threads,
                                       std::shared_ptr<const TorusKernel> g = nullptr) {
    CertificateRow row;
    row.n = n;
    auto seeds = s.restart_seeds();
    if (s.domain == Domain::torus) {
        if (!g) g = make_kernel(s);
        Certificate c = certify_lower_bound(*g, n, s.grid);
        row.r = c.r;
        row.self_energy = c.self_energy;
        row.c_sub = c.c_sub;
        row.bound = c.bound;
        Minimum m = minimize_torus_energy(g, n, seeds, s.anneal_options(), threads);
        row.h_opt = m.energy;
        row.budget_exhausted = m.budget_exhausted;
        row.minimizer = std::move(m.positions);
    } else {
        auto eq = EquilibriumMeasure::quadratic();
        row.bound = regularized_lower_bound(eq, n);
        Minimum m = regularized_ground_state(eq, n, seeds, s.anneal_options(), threads);
        row.h_opt = m.energy;
        row.budget_exhausted = m.budget_exhausted;
        row.minimizer = std::move(m.positions);
    }
    return row;
}

inline void write_certificates(std::ostream& out, const std::vector<CertificateRow>& rows) {
    out << certificate_schema << '\n' << "N,r,S(r),C_sub,B(N),H_opt,B/N^(4/3),H_opt/N^(4/3),budget_exhausted\n";
    for (const auto& r : rows) {
        out << r.n << ',' << format_double(r.r) << ',' << format_double(r.self_energy) << ',' << format_double(r.c_sub) << ','
            << format_double(r.bound) << ',' << format_double(r.h_opt) << ',' << format_double(r.scaled_bound()) << ','
            << format_double(r.scaled_h_opt()) << ',' << (r.budget_exhausted ? "true" : "false") << '\n';
    }
}

// ---------------------------------------------------------------------------
// Audit table

namespace detail {

inline std::string csv_quote(std::string_view s) {
    std::string o = "\"";
    for (char c : s) {
        if (c == '"') o += '"';
        o += c;
    }
    return o + '"';
}

}  // namespace detail

inline void write_audit(std::ostream& out, const AuditReport& rep) {
    out << audit_schema << '\n' << "check,kind,pass,worst_slack,tolerance,evaluations,worst_chain,worst_sweep,statement\n";
    for (const auto& c : rep.checks) {
        out << c.name << ',' << (c.expectation ? "expectation" : "per-sample") << ',' << (c.pass() ? "true" : "false") << ','
            << format_double(c.worst_slack) << ',' << format_double(c.tolerance) << ',' << c.evaluations << ','
            << c.worst_chain << ',' << c.worst_sweep << ',' << detail::csv_quote(c.statement) << '\n';
    }
}

struct AuditOutcome {
    AuditReport report;
    AuditViolation violation;
};

inline AuditOutcome run_inequality_audit(const ExperimentSpec& s, std::size_t n, unsigned threads,
                                         std::shared_ptr<const TorusKernel> g = nullptr) {
    auto eq = EquilibriumMeasure::quadratic();
    auto obs = detail::parse_observables(s, eq);
    AuditOutcome out;
    if (s.domain == Domain::torus) {
        if (!g) g = make_kernel(s);
        TorusAuditOptions o;
        o.n = n;
        o.beta = s.beta_at(n);
        o.run = s.audit_run;
        o.chains = s.audit_chains;
        o.grid = s.audit_grid;
        o.seed = s.seed;
        o.phi = obs.front();
        o.threads = threads;
        double bound = certify_lower_bound(*g, n, s.grid).bound;
        auto recs = collect_torus_records(g, o);
        out.report = evaluate_torus_audit(recs, *g, o.beta, bound, o.phi, o.grid, &out.violation);
    } else {
        EuclideanAuditOptions o;
        o.n = n;
        o.beta = s.beta_at(n);
        o.run = s.audit_run;
        o.chains = s.audit_chains;
        o.grid = s.audit_grid;
        o.lebesgue_grid = s.audit_lebesgue_grid;
        o.seed = s.seed;
        o.phi = obs.front();
        o.threads = threads;
        auto recs = collect_euclidean_records(eq, o);
        out.report = evaluate_euclidean_audit(recs, eq, o.beta, &*o.phi, &out.violation);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands

inline Report command_kernel_check(const ExperimentSpec& s, const std::filesystem::path& dir) {
    detail::ensure_dir(dir);
    auto g = make_kernel(s);
    KernelCheck k = kernel_check(*g, s.seed, 200, s.grid);
    Report rep;
    auto path = dir / "kernel-check.csv";
    auto f = detail::open_out(path);
    write_kernel_check(f, k);
    rep.files.push_back(path.string());
    std::ostringstream m;
    write_kernel_check(m, k);
    rep.message = m.str();
    rep.exit_code = k.pass() ? exit_pass : exit_failure;
    return rep;
}

inline Report command_sample(const ExperimentSpec& s, const std::filesystem::path& dir, unsigned threads) {
    detail::ensure_dir(dir);
    auto eq = EquilibriumMeasure::quadratic();
    auto obs = detail::parse_observables(s, eq);
    std::vector<std::string> names;
    for (const auto& o : obs) names.push_back(o.name());
    std::shared_ptr<const TorusKernel> g;
    if (s.domain == Domain::torus) g = make_kernel(s);
    Report rep;
    nlohmann::ordered_json summary;
    summary["schema"] = "coulomb-summary v1";
    summary["kind"] = "sample";
    summary["domain"] = to_string(s.domain);
    summary["seed"] = s.seed;
    auto per_n = nlohmann::ordered_json::array();
    bool converged = true, violated = false;
    for (std::size_t n : s.ns) {
        const double beta = s.beta_at(n);
        std::vector<ChainState<TorusModel>> tchains;
        std::vector<ChainState<EuclideanModel>> echains;
        std::vector<ChainRun> runs(s.chains);
        auto stem = "N" + std::to_string(n);
        // Keep the final chain states for checkpoints.
        if (s.domain == Domain::torus) {
            for (std::size_t c = 0; c < s.chains; ++c) {
                Rng init(s.seed, detail::init_stream(n, c));
                tchains.push_back({TorusConfiguration(TorusModel(g), perturbed_lattice(n, 0.5, init)), beta,
                                   Rng(s.seed, detail::chain_stream(n, c)), 0.1});
            }
            parallel_for(s.chains, threads, [&](std::size_t c) { runs[c] = run_chain(tchains[c], s.run, obs, c); });
            for (std::size_t c = 0; c < s.chains; ++c) {
                auto p = dir / ("checkpoint-" + stem + "-c" + std::to_string(c) + ".csv");
                save_checkpoint(p.string(), tchains[c], c);
                rep.files.push_back(p.string());
            }
        } else {
            for (std::size_t c = 0; c < s.chains; ++c) {
                Rng init(s.seed, detail::init_stream(n, c));
                echains.push_back({EuclideanConfiguration(quadratic_model(eq), uniform_ball_points(n, eq.radius(), init)),
                                   beta, Rng(s.seed, detail::chain_stream(n, c)), 0.1});
            }
            parallel_for(s.chains, threads, [&](std::size_t c) { runs[c] = run_chain(echains[c], s.run, obs, c); });
            for (std::size_t c = 0; c < s.chains; ++c) {
                auto p = dir / ("checkpoint-" + stem + "-c" + std::to_string(c) + ".csv");
                save_checkpoint(p.string(), echains[c], c);
                rep.files.push_back(p.string());
            }
        }
        std::vector<TraceRow> rows;
        for (const auto& r : runs) rows.insert(rows.end(), r.trace.begin(), r.trace.end());
        {
            auto p = dir / ("trace-" + stem + ".csv");
            auto f = detail::open_out(p);
            write_trace(f, rows, names);
            rep.files.push_back(p.string());
        }
        nlohmann::ordered_json j;
        j["N"] = n;
        j["beta"] = beta;
        auto acc = nlohmann::ordered_json::array();
        for (const auto& r : runs) acc.push_back(r.acceptance);
        j["acceptance"] = acc;
        auto od = nlohmann::ordered_json::array();
        for (std::size_t o = 0; o < obs.size(); ++o) {
            std::vector<std::vector<double>> cols;
            for (const auto& r : runs) cols.push_back(trace_column(r.trace, o));
            auto d = diagnose(cols);
            converged = converged && d.rhat <= s.rhat_limit;
            od.push_back({{"observable", names[o]}, {"ess", d.ess}, {"tau", d.tau}, {"rhat", d.rhat}});
        }
        j["diagnostics"] = od;
        if (s.audit) {
            auto a = run_inequality_audit(s, n, threads, g);
            auto p = dir / ("audit-" + stem + ".csv");
            auto f = detail::open_out(p);
            write_audit(f, a.report);
            rep.files.push_back(p.string());
            j["audit_pass"] = a.report.pass();
            j["audit_coverage"] = a.report.coverage;
            if (!a.report.pass()) {
                violated = true;
                if (!a.violation.check.empty()) {
                    auto vp = dir / ("violation-" + stem + ".csv");
                    save_snapshot(vp.string(), a.violation.positions, SnapshotMeta{3, s.domain, s.seed, a.violation.sweep});
                    rep.files.push_back(vp.string());
                    j["violation"] = {{"check", a.violation.check}, {"chain", a.violation.chain}, {"sweep", a.violation.sweep}};
                }
            }
        }
        per_n.push_back(j);
    }
    summary["runs"] = per_n;
    summary["status"] = violated ? "VIOLATION" : (converged ? "OK" : "UNCONVERGED");
    auto p = dir / "summary.json";
    auto f = detail::open_out(p);
    f << summary.dump(2) << '\n';
    rep.files.push_back(p.string());
    rep.message = summary["status"].get<std::string>();
    rep.exit_code = violated ? exit_violation : (converged ? exit_pass : exit_unconverged);
    return rep;
}

inline Report command_ground_state(const ExperimentSpec& s, const std::filesystem::path& dir, unsigned threads) {
    detail::ensure_dir(dir);
    std::shared_ptr<const TorusKernel> g;
    if (s.domain == Domain::torus) g = make_kernel(s);
    std::vector<CertificateRow> rows;
    Report rep;
    bool ok = true;
    for (std::size_t n : s.ns) {
        rows.push_back(ground_state_row(s, n, threads, g));
        ok = ok && rows.back().bound <= rows.back().h_opt;
        auto p = dir / ("minimizer-N" + std::to_string(n) + ".csv");
        save_snapshot(p.string(), rows.back().minimizer, SnapshotMeta{3, s.domain, s.seed, 0});
        rep.files.push_back(p.string());
    }
    auto p = dir / "certificate.csv";
    auto f = detail::open_out(p);
    write_certificates(f, rows);
    rep.files.push_back(p.string());
    std::ostringstream m;
    write_certificates(m, rows);
    if (s.domain == Domain::torus) m << "numerical certificate: C_sub measured on a grid with safety factor 2\n";
    rep.message = m.str();
    rep.exit_code = ok ? exit_pass : exit_violation;
    return rep;
}

inline Report command_sweep(const ExperimentSpec& s, const std::filesystem::path& dir, unsigned threads) {
    return emit_report(run_sweep(s, threads), s, dir);
}

inline Report command_analyze(const ExperimentSpec& s, const std::filesystem::path& dir) {
    Report rep;
    std::ostringstream m;
    m << equilibrium_summary(EquilibriumMeasure::quadratic()) << '\n';
    if (!s.input.empty()) {
        auto a = analyze_scaling_file(s.input);
        m.precision(17);
        m << "rows=" << a.rows << " reported_slope=" << a.reported_slope << " refit_slope=" << a.refit_slope
          << " baseline_slope=" << a.reported_baseline_slope << '\n';
        detail::ensure_dir(dir);
        nlohmann::ordered_json j;
        j["schema"] = "coulomb-summary v1";
        j["kind"] = "analyze";
        j["input"] = s.input;
        j["rows"] = a.rows;
        j["reported_slope"] = detail::json_number(a.reported_slope);
        j["refit_slope"] = detail::json_number(a.refit_slope);
        auto p = dir / "analysis.json";
        auto f = detail::open_out(p);
        f << j.dump(2) << '\n';
        rep.files.push_back(p.string());
    }
    rep.message = m.str();
    return rep;
}

/// Dispatch by kind. The config's own kind, when present, must agree.
inline Report run_experiment(ExperimentKind kind, const ExperimentSpec& s, unsigned threads) {
    if (s.kind && *s.kind != kind) {
        throw ConfigError(std::string("config declares kind '") + to_string(*s.kind) + "' but '" + to_string(kind) +
                          "' was requested");
    }
    if ((kind == ExperimentKind::sample || kind == ExperimentKind::sweep || kind == ExperimentKind::ground_state) &&
        s.ns.empty()) {
        throw ConfigError("system.n is required");
    }
    std::filesystem::path dir(s.out);
    switch (kind) {
        case ExperimentKind::kernel_check: return command_kernel_check(s, dir);
        case ExperimentKind::sample: return command_sample(s, dir, threads);
        case ExperimentKind::ground_state: return command_ground_state(s, dir, threads);
        case ExperimentKind::sweep: return command_sweep(s, dir, threads);
        case ExperimentKind::analyze: return command_analyze(s, dir);
    }
    return {};
}

}  // namespace coulomb
