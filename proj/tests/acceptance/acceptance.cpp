// Acceptance runner: one PASS/FAIL line per criterion, with wall time.
// Usage: acceptance --out DIR [--only K]... Exit status 0 iff every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coulomb/experiments.hpp"

using namespace coulomb;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Context {
    fs::path out;
    fs::path source{COULOMB_SOURCE_DIR};
    unsigned threads = 1;

    ExperimentSpec spec(const std::string& config, const std::string& subdir) const {
        ExperimentSpec s = load_spec((source / "configs" / config).string());
        s.out = (out / subdir).string();
        return s;
    }
};

// Calibrated once, then frozen.
constexpr double h_opt_band_lo = -0.100;
constexpr double h_opt_band_hi = -0.065;
constexpr double frozen_envelope_c = 0.0;
constexpr double frozen_envelope_c_zeta = 0.30;

std::string num(double v, int digits = 4) {
    std::ostringstream o;
    o.precision(digits);
    o << v;
    return o.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Kernel PDE contract.
Outcome kernel_contract(const Context& ctx) {
    auto s = ctx.spec("kernel-check.ini", "c1-kernel");
    auto g = make_kernel(s);
    KernelCheck k = kernel_check(*g, s.seed, 200, s.grid);
    fs::create_directories(s.out);
    std::ofstream f(fs::path(s.out) / "kernel-check.csv");
    write_kernel_check(f, k);
    return {k.pass(), "fd6 " + num(k.fd_max_error) + " (<= 1e-3), fd2 order " + num(k.fd2_order(), 3) + ", alpha " +
                          num(k.alpha_max_diff) + " (<= 1e-10), grid mean " + num(k.grid_mean) + " (|.| <= 5e-3)"};
}

// Every incremental delta and the cached energy against full recomputation.
template <typename Model>
void move_identity_defects(const Model& model, std::vector<Vec3> xs, Rng& r, const std::function<Vec3()>& draw,
                           double& worst_sum, double& worst_delta) {
    Configuration<Model> c(model, std::move(xs));
    double before = Configuration<Model>(model, c.positions()).energy();
    for (int m = 0; m < 10000; ++m) {
        std::size_t j = r.index(c.size());
        Vec3 y = draw();
        double d = c.delta_energy_move(j, y);
        c.apply_move(j, y);
        double full = Configuration<Model>(model, c.positions()).energy();
        double scale = std::max(1.0, std::abs(full));
        worst_delta = std::max(worst_delta, std::abs((full - before) - d) / scale);
        worst_sum = std::max({worst_sum, std::abs(c.energy() - full) / scale, c.local_sum_defect()});
        before = full;
    }
}

Outcome exact_identities(const Context&) {
    Rng r(2, 0);
    auto g = std::make_shared<const TorusKernel>();
    double sum_t = 0.0, delta_t = 0.0, sum_e = 0.0, delta_e = 0.0;
    move_identity_defects(TorusModel(g), uniform_torus_points(64, r), r,
                          [&] { return Vec3{r.uniform(), r.uniform(), r.uniform()}; }, sum_t, delta_t);
    auto eq = EquilibriumMeasure::quadratic();
    const double L = 2.0 * eq.radius();
    move_identity_defects(quadratic_model(eq), uniform_ball_points(64, eq.radius(), r), r,
                          [&] { return Vec3{r.uniform(-L, L), r.uniform(-L, L), r.uniform(-L, L)}; }, sum_e, delta_e);
    double worst = std::max({sum_t, sum_e, delta_t, delta_e});
    return {worst <= 1e-10, "torus sum " + num(sum_t) + ", delta " + num(delta_t) + "; euclidean sum " + num(sum_e) +
                                ", delta " + num(delta_e) + " (all <= 1e-10 relative, 1e4 moves at N = 64)"};
}

// Sampler oracle on the N = 2 pair law.
Outcome sampler_oracle(const Context&) {
    const double beta = 2.0;
    const int bins = 8;
    auto g = std::make_shared<const TorusKernel>();
    auto law = pair_displacement_law(*g, beta, 48, bins);
    auto run = [&](bool heat, std::size_t sweeps, std::uint64_t seed, double& ess) {
        ChainState<TorusModel> ch{TorusConfiguration(TorusModel(g), {{0.1, 0.1, 0.1}, {0.6, 0.6, 0.6}}), beta, Rng(seed, 1),
                                  0.5};
        auto step = [&] { heat ? heatbath_sweep(ch, 16) : (void)metropolis_sweep(ch); };
        for (int s = 0; s < 200; ++s) step();
        std::vector<double> hist(law.size(), 0.0), coord;
        coord.reserve(sweeps);
        for (std::size_t s = 0; s < sweeps; ++s) {
            step();
            hist[displacement_bin(ch.config.position(0), ch.config.position(1), bins)] += 1.0 / static_cast<double>(sweeps);
            coord.push_back(std::cos(2.0 * std::numbers::pi * (ch.config.position(1)[0] - ch.config.position(0)[0])));
        }
        ess = effective_sample_size(coord);
        return total_variation(hist, law);
    };
    double ess_m = 0.0, ess_h = 0.0;
    double tv_m = run(false, 300000, 3, ess_m);
    double tv_h = run(true, 110000, 4, ess_h);
    bool ok = tv_m <= 0.05 && tv_h <= 0.05 && ess_m >= 1e5 && ess_h >= 1e5;
    return {ok, "metropolis TV " + num(tv_m) + " ESS " + num(ess_m, 6) + "; heat-bath TV " + num(tv_h) + " ESS " +
                    num(ess_h, 6) + " (TV <= 0.05, ESS >= 1e5)"};
}

// Ground-state certificates and the frozen H_opt band.
Outcome ground_state_scaling(const Context& ctx) {
    auto s = ctx.spec("ground-state.ini", "c4-ground-state");
    auto g = make_kernel(s);
    std::vector<CertificateRow> rows;
    for (std::size_t n : s.ns) rows.push_back(ground_state_row(s, n, ctx.threads, g));
    fs::create_directories(s.out);
    std::ofstream f(fs::path(s.out) / "certificate.csv");
    write_certificates(f, rows);

    bool sandwich = true, band = true;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    double hlo = lo, hhi = hi;
    for (const auto& r : rows) {
        sandwich = sandwich && r.bound <= r.h_opt;
        lo = std::min(lo, std::abs(r.scaled_bound()));
        hi = std::max(hi, std::abs(r.scaled_bound()));
        hlo = std::min(hlo, r.scaled_h_opt());
        hhi = std::max(hhi, r.scaled_h_opt());
        band = band && r.scaled_h_opt() >= h_opt_band_lo && r.scaled_h_opt() <= h_opt_band_hi;
    }
    double spread = hi / lo - 1.0;
    return {sandwich && spread <= 0.25 && band,
            std::string("B <= H_opt ") + (sandwich ? "yes" : "no") + ", B/N^(4/3) spread " + num(spread, 3) +
                " (<= 0.25), H_opt/N^(4/3) in [" + num(hlo) + ", " + num(hhi) + "] (band [" + num(h_opt_band_lo) + ", " +
                num(h_opt_band_hi) + "])"};
}

// Empirical audit of the probabilistic ground-state argument.
Outcome inequality_audit(const Context& ctx) {
    auto s = ctx.spec("audit.ini", "c5-audit");
    auto a = run_inequality_audit(s, 8, ctx.threads);
    fs::create_directories(s.out);
    std::ofstream f(fs::path(s.out) / "audit-N8.csv");
    write_audit(f, a.report);
    const AuditCheck* moment = a.report.find("exponential_moment_l1");
    bool ok = a.report.pass() && moment && moment->worst_slack > 0.0;
    std::size_t failed = 0;
    std::string names;
    for (const auto& c : a.report.checks)
        if (!c.pass()) ++failed, names += " " + c.name;
    return {ok, std::to_string(a.report.checks.size()) + " checks, " + std::to_string(failed) + " failed" + names +
                    "; exponential-moment slack " + (moment ? num(moment->worst_slack) : std::string("missing"))};
}

std::string slope_text(const std::optional<LineFit>& f) {
    return f ? num(f->slope, 3) + " +- " + num(1.96 * f->slope_stderr, 2) : std::string("n/a");
}

bool scaling_ok(const ScalingResult& r, bool converged, std::size_t min_ess, std::string& why) {
    bool ok = true;
    for (const auto& c : scaling_checks(r, converged))
        if (!c.pass) ok = false, why += " " + c.name;
    for (const auto& row : r.rows)
        if (!(row.ess >= static_cast<double>(min_ess))) ok = false, why += " ess(N=" + std::to_string(row.n) + ")";
    return ok;
}

// Torus fluctuation scaling with its flat control.
Outcome torus_scaling(const Context& ctx) {
    auto s = ctx.spec("sweep-torus.ini", "c6-sweep-torus");
    auto res = run_sweep(s, ctx.threads);
    emit_report(res, s, s.out);
    auto c = ctx.spec("sweep-torus-control.ini", "c6-sweep-torus-control");
    auto ctrl = run_sweep(c, ctx.threads);
    emit_report(ctrl, c, c.out);

    std::string why;
    const auto& r = res.per_observable.front();
    bool ok = scaling_ok(r, res.converged, 200, why);
    const auto& k = ctrl.per_observable.front();
    bool ctrl_ok = k.fit && k.baseline_fit &&
                   std::abs(k.fit->slope - k.baseline_fit->slope) <=
                       2.0 * std::hypot(k.fit->slope_stderr, k.baseline_fit->slope_stderr);
    if (!ctrl_ok) why += " control";
    double min_ess = std::numeric_limits<double>::infinity();
    for (const auto& row : r.rows) min_ess = std::min(min_ess, row.ess);
    return {ok && ctrl_ok, "slope " + slope_text(r.fit) + " vs baseline " + slope_text(r.baseline_fit) +
                               "; control " + slope_text(k.fit) + " vs " + slope_text(k.baseline_fit) + "; min ESS " +
                               num(min_ess, 5) + "; worst rhat " + num(res.worst_rhat, 4) + (why.empty() ? "" : ";" + why)};
}

// Equilibrium measure of the quadratic potential.
Outcome equilibrium(const Context&) {
    auto eq = EquilibriumMeasure::quadratic();
    const double R = eq.radius();
    bool closed = std::abs(R - std::pow(4.0 * std::numbers::pi, -1.0 / 3.0)) <= 1e-15 && eq.density() == 3.0;

    double el = 0.0;
    const double ref = eq.field_quadrature(0.5 * R) + eq.potential()(Vec3{0.5 * R, 0, 0});
    for (int i = 0; i < 40; ++i) {
        double t = (i + 0.5) / 40.0 * R;
        el = std::max(el, std::abs(eq.field_quadrature(t) + eq.potential()(Vec3{t, 0, 0}) - ref));
    }
    double newton = 0.0;
    for (int i = 0; i < 10; ++i) {
        double t = R * (1.05 + 0.5 * i);
        newton = std::max(newton, std::abs(eq.field_quadrature(t) - kappa3 / t));
    }

    Rng r(7, 0);
    double inside = 0.0, negative = 0.0;
    for (int i = 0; i < 10000; ++i) {
        Vec3 x{r.uniform(-4, 4), r.uniform(-4, 4), r.uniform(-4, 4)};
        double z = eq.zeta(x);
        negative = std::min(negative, z);
        if (eq.contains(x)) inside = std::max(inside, std::abs(z));
    }
    for (int i = 0; i <= 1000; ++i) inside = std::max(inside, std::abs(eq.zeta(Vec3{0, R * i / 1000.0, 0})));

    EuclideanConfiguration c(quadratic_model(eq), uniform_ball_points(4, 1.3 * R, r));
    auto f = potential_field(c, eq, 96, FieldMeasure::equilibrium);
    double l1 = std::abs(l1_norm(f) / l1_norm_direct(f) - 1.0);

    bool ok = closed && el <= 1e-6 && newton <= 1e-6 && inside <= 1e-10 && negative >= 0.0 && l1 <= 0.01;
    return {ok, "R " + num(R, 8) + ", rho " + num(eq.density()) + "; constancy " + num(el) + " (<= 1e-6), exterior " +
                    num(newton) + "; |zeta| on support " + num(inside) + " (<= 1e-10), min zeta " + num(negative) +
                    "; L1 identity " + num(l1) + " (<= 0.01)"};
}

// Euclidean fluctuation scaling and the zeta exponential moment.
Outcome euclidean_scaling(const Context& ctx) {
    auto s = ctx.spec("sweep-euclidean.ini", "c8-sweep-euclidean");
    auto res = run_sweep(s, ctx.threads);
    emit_report(res, s, s.out);
    std::string why;
    const auto& r = res.per_observable.front();
    bool ok = scaling_ok(r, res.converged, 200, why);
    ZetaEnvelope frozen{frozen_envelope_c, frozen_envelope_c_zeta};
    bool env = res.zeta.size() == s.ns.size();
    for (const auto& z : res.zeta)
        env = env && std::isfinite(z.log_moment) && std::isfinite(z.log_stderr) &&
              z.log_moment + 2.0 * z.log_stderr <= frozen(z.beta, z.n);
    if (!env) why += " zeta_envelope";
    return {ok && env, "slope " + slope_text(r.fit) + " vs baseline " + slope_text(r.baseline_fit) +
                           "; zeta envelope fit C " + num(res.envelope.c) + ", C_zeta " + num(res.envelope.c_zeta) +
                           " (frozen " + num(frozen_envelope_c) + ", " + num(frozen_envelope_c_zeta) + ")" +
                           (why.empty() ? "" : ";" + why)};
}

// Golden file, independent of the worker count.
Outcome determinism(const Context& ctx) {
    const std::string csv = "scaling-cos-1_0_0.csv";
    auto golden = slurp(ctx.source / "tests" / "golden" / csv);
    bool same = !golden.empty();
    std::string detail;
    for (unsigned t : {1u, 2u, 4u}) {
        auto s = ctx.spec("golden.ini", "c9-golden-t" + std::to_string(t));
        emit_report(run_sweep(s, t), s, s.out);
        bool eq = slurp(fs::path(s.out) / csv) == golden;
        same = same && eq;
        detail += (detail.empty() ? "" : ", ") + std::to_string(t) + " thread" + (t > 1 ? "s " : " ") +
                  (eq ? "identical" : "differs");
    }
    return {same, detail};
}

struct Criterion {
    int id;
    std::string title;
    double limit_seconds;
    Outcome (*run)(const Context&);
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    Context ctx;
    std::string out = "acceptance_out";
    std::vector<int> only;
    unsigned threads = 0;
    app.add_option("--out", out, "Output directory for artifacts");
    app.add_option("--only", only, "Run only these criteria");
    app.add_option("--threads", threads, "Worker threads (default: environment, then hardware)");
    CLI11_PARSE(app, argc, argv);
    ctx.out = out;
    ctx.threads = resolve_threads(threads);
    fs::create_directories(ctx.out);

    const std::vector<Criterion> all = {
        {1, "kernel PDE contract", 10, kernel_contract},
        {2, "exact energy identities", 30, exact_identities},
        {3, "sampler oracle", 300, sampler_oracle},
        {4, "ground-state scaling", 1200, ground_state_scaling},
        {5, "inequality audit", 600, inequality_audit},
        {6, "torus fluctuation scaling", 3600, torus_scaling},
        {7, "Euclidean equilibrium", 120, equilibrium},
        {8, "Euclidean fluctuation scaling", 3600, euclidean_scaling},
        {9, "determinism", 60, determinism},
    };

    int failures = 0;
    for (const auto& c : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        bool in_time = secs <= c.limit_seconds;
        bool pass = o.pass && in_time;
        if (!in_time) o.detail += "; over the " + num(c.limit_seconds) + " s limit";
        failures += pass ? 0 : 1;
        std::cout << "criterion " << c.id << " (" << c.title << "): " << (pass ? "PASS" : "FAIL") << " [" << num(secs, 3)
                  << " s] " << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
