#pragma once

// Sample-by-sample audit of the exponential-moment argument. Each displayed
// step is one named check: deterministic steps are evaluated on every audited
// configuration, expectation steps on the empirical mean with a tolerance of
// 3 (stderr + grid refinement delta). Grid quantities are computed at M and
// 2M; the 2M value is primary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "diagnostics.hpp"
#include "equilibrium.hpp"
#include "groundstate.hpp"
#include "kernel.hpp"
#include "observables.hpp"
#include "parallel.hpp"
#include "sampler.hpp"
#include "system.hpp"

namespace coulomb {

struct AuditCheck {
    std::string name;
    std::string statement;
    bool expectation = false;
    double worst_slack = std::numeric_limits<double>::infinity();  // rhs - lhs at the worst evaluation
    double tolerance = 0.0;                                        // allowed deficit at that evaluation
    double worst_margin = std::numeric_limits<double>::infinity(); // min of slack + tolerance
    std::size_t evaluations = 0;
    std::uint64_t worst_sweep = 0;
    std::uint64_t worst_chain = 0;

    bool pass() const { return evaluations > 0 && worst_margin >= 0.0; }

    void record(double lhs, double rhs, double tol, std::uint64_t chain = 0, std::uint64_t sweep = 0) {
        double slack = rhs - lhs;
        double margin = std::isnan(slack) ? -std::numeric_limits<double>::infinity() : slack + tol;
        ++evaluations;
        if (margin < worst_margin || evaluations == 1) {
            worst_margin = margin;
            worst_slack = slack;
            tolerance = tol;
            worst_sweep = sweep;
            worst_chain = chain;
        }
    }
};

struct AuditReport {
    std::vector<AuditCheck> checks;
    std::vector<std::string> coverage;  // names of every check in evaluation order
    std::size_t samples = 0;
    bool pass() const {
        for (const auto& c : checks)
            if (!c.pass()) return false;
        return !checks.empty();
    }
    const AuditCheck* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
    AuditCheck& add(std::string name, std::string statement, bool expectation) {
        checks.push_back(AuditCheck{std::move(name), std::move(statement), expectation});
        coverage.push_back(checks.back().name);
        return checks.back();
    }
};

/// Configuration that violated a deterministic check.
struct AuditViolation {
    std::string check;
    std::uint64_t chain = 0;
    std::uint64_t sweep = 0;
    std::vector<Vec3> positions;
};

namespace detail {

// Relative floating-point allowance for checks that hold exactly.
inline double exact_tol(double a, double b) { return 1e-9 * std::max({1.0, std::abs(a), std::abs(b)}); }

// log sum_c w_c exp(-beta v_c), stable for large |beta v|.
inline double log_integral_exp(std::span<const double> v, std::span<const double> w, double beta) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v.size(); ++i)
        if (w[i] > 0.0) top = std::max(top, -beta * v[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (w[i] > 0.0) s += w[i] * std::exp(-beta * v[i] - top);
    return top + std::log(s);
}

inline double log_mean_exp(std::span<const double> v) {
    double top = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - top);
    return top + std::log(s / static_cast<double>(v.size()));
}

// Blocked estimate of log E[e^{v}] with stderr; falls back to a plain
// batch estimate for short traces.
inline std::pair<double, double> log_expectation(std::span<const double> v) {
    if (v.size() >= 100) {
        auto m = exp_moment(v, 1.0);
        return {m.log_value, m.log_stderr};
    }
    return {log_mean_exp(v), std::numeric_limits<double>::infinity()};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Torus

struct TorusAuditOptions {
    std::size_t n = 8;
    double beta = 2.0;
    RunOptions run{20000, 1000, 20};
    std::size_t chains = 1;
    int grid = 24;  // M; 2M is also evaluated
    std::uint64_t seed = 1;
    TestFunction phi = TestFunction::cosine({1, 0, 0});
    unsigned threads = 1;
};

/// Grid quantities of one configuration at one resolution.
struct TorusGridSample {
    double log_int_exp = 0.0;               // log int e^{-beta P}
    std::vector<double> log_int_exp_hat;    // log int e^{-beta P_j^}, per j
    double int_exp_neg = 0.0;               // int e^{-beta (P)_-}
    double neg = 0.0;                       // int (P)_-
    double l1 = 0.0;                        // -2 int (P)_-
    double l1_direct = 0.0;                 // int |P|
    double mean = 0.0;                      // int P
    double min_value = 0.0;
    double worst_mpot_margin = std::numeric_limits<double>::infinity();  // min_{c,j} g(c - x_j) + m_pot
    double worst_cell_margin = std::numeric_limits<double>::infinity();  // min_c e^{-bP} - e^{-bP_-} + 1
};

inline TorusGridSample torus_grid_sample(const TorusKernel& g, std::span<const Vec3> xs, double beta, int M) {
    const std::size_t n = xs.size();
    const std::size_t cells = static_cast<std::size_t>(M) * M * M;
    const double h = 1.0 / M;
    const double w = 1.0 / static_cast<double>(cells);
    std::vector<double> gj(n * cells);
    std::vector<double> P(cells, 0.0);
    TorusGridSample s;
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j)
            for (int k = 0; k < M; ++k) {
                std::size_t c = (static_cast<std::size_t>(i) * M + j) * M + k;
                Vec3 x{(i + 0.5) * h, (j + 0.5) * h, (k + 0.5) * h};
                for (std::size_t p = 0; p < n; ++p) {
                    double v = detail::torus_field_at(g, std::span<const Vec3>(&xs[p], 1), x, h);
                    gj[p * cells + c] = v;
                    P[c] += v;
                    s.worst_mpot_margin = std::min(s.worst_mpot_margin, v + g.m_pot());
                }
            }
    std::vector<double> weights(cells, w);
    s.log_int_exp = detail::log_integral_exp(P, weights, beta);
    s.min_value = *std::min_element(P.begin(), P.end());
    for (std::size_t c = 0; c < cells; ++c) {
        double neg = std::min(P[c], 0.0);
        s.neg += w * neg;
        s.l1_direct += w * std::abs(P[c]);
        s.mean += w * P[c];
        s.int_exp_neg += w * std::exp(-beta * neg);
        s.worst_cell_margin = std::min(s.worst_cell_margin, std::exp(-beta * P[c]) - (std::exp(-beta * neg) - 1.0));
    }
    s.l1 = -2.0 * s.neg;
    std::vector<double> hat(cells);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t c = 0; c < cells; ++c) hat[c] = P[c] - gj[p * cells + c];
        s.log_int_exp_hat.push_back(detail::log_integral_exp(hat, weights, beta));
    }
    return s;
}

struct TorusAuditRecord {
    std::uint64_t chain = 0;
    std::uint64_t sweep = 0;
    std::vector<Vec3> positions;
    double energy = 0.0;
    double local_defect = 0.0;
    std::vector<double> local;  // l_j
    double statistic = 0.0;
    TorusGridSample coarse, fine;
};

namespace detail {

inline TorusAuditRecord torus_record(const TorusConfiguration& cfg, double beta, int M, const TestFunction& phi,
                                     std::uint64_t chain, std::uint64_t sweep) {
    TorusAuditRecord r;
    r.chain = chain;
    r.sweep = sweep;
    r.positions = cfg.positions();
    r.energy = cfg.energy();
    r.local_defect = cfg.local_sum_defect();
    for (std::size_t j = 0; j < cfg.size(); ++j) r.local.push_back(cfg.local_energy(j));
    r.statistic = linear_statistic(cfg, phi);
    const auto& g = cfg.model().kernel();
    r.coarse = torus_grid_sample(g, r.positions, beta, M);
    r.fine = torus_grid_sample(g, r.positions, beta, 2 * M);
    return r;
}

}  // namespace detail

inline std::vector<TorusAuditRecord> collect_torus_records(std::shared_ptr<const TorusKernel> g,
                                                           const TorusAuditOptions& opt) {
    std::vector<std::vector<TorusAuditRecord>> per_chain(opt.chains);
    parallel_for(opt.chains, opt.threads, [&](std::size_t c) {
        Rng init(opt.seed, 1000000 + c);
        auto start = perturbed_lattice(opt.n, 0.5, init);
        ChainState<TorusModel> chain{TorusConfiguration(TorusModel(g), std::move(start)), opt.beta,
                                     Rng(opt.seed, 2000000 + c), 0.1};
        run_chain(chain, opt.run, {}, c, [&](const ChainState<TorusModel>& st) {
            TorusConfiguration cfg = st.config;
            cfg.total_energy();
            per_chain[c].push_back(detail::torus_record(cfg, opt.beta, opt.grid, opt.phi, c, st.sweep));
        });
    });
    std::vector<TorusAuditRecord> all;
    for (auto& v : per_chain)
        for (auto& r : v) all.push_back(std::move(r));
    return all;
}

/// Evaluates every step of the torus argument on the records. `bound` is the
/// certified B(N); `violation` receives the first failing configuration.
inline AuditReport evaluate_torus_audit(const std::vector<TorusAuditRecord>& recs, const TorusKernel& g, double beta,
                                        double bound, const TestFunction& phi, int grid,
                                        AuditViolation* violation = nullptr) {
    AuditReport rep;
    rep.checks.reserve(32);
    rep.samples = recs.size();
    if (recs.empty()) return rep;
    const double N = static_cast<double>(recs.front().positions.size());
    const double m = g.m_pot();

    auto& c_local = rep.add("local_energy_sum", "H = 1/2 sum_j l_j", false);
    auto& c_lower = rep.add("field_lower_bound", "min_x P mu_X(x) >= -N m_pot", false);
    auto& c_mcell = rep.add("mpot_replacement_cell", "e^{-b P(x)} <= e^{b m_pot} e^{-b P_j^(x)} at every cell and j", false);
    auto& c_mint = rep.add("mpot_replacement_integral", "int e^{-b P} <= e^{b m_pot} int e^{-b P_j^} for every j", false);
    auto& c_jensen_j = rep.add("jensen_over_particles", "(1/N) sum_j e^{b l_j} >= e^{2 b H / N}", false);
    auto& c_cert = rep.add("certified_ground_state", "H >= B(N)", false);
    auto& c_cell = rep.add("negative_part_cell", "e^{-b P(x)} >= e^{-b P_-(x)} - 1 at every cell", false);
    auto& c_jensen_neg = rep.add("jensen_negative_part", "int e^{-b P_-} >= exp(-b int P_-)", false);
    auto& c_chain = rep.add("integral_lower_bound", "int e^{-b P} >= e^{b ||P||_1 / 2} - 1", false);
    auto& c_meanzero = rep.add("negative_part_identity",
                               "int P_- = -||P||_1 / 2: grid mean of P equals its aliasing residual sum_j g(M(c0 - x_j))/M^2",
                               false);
    auto& c_dual = rep.add("duality", "|<phi, mu_X>| <= ||Lap phi||_inf ||P mu_X||_1", false);
    auto& e_cond = rep.add("conditional_identity", "E[(int e^{-b P_j^}) e^{b l_j}] = 1", true);
    auto& e_mpot = rep.add("moment_after_replacement", "E[(int e^{-b P}) e^{b l_j}] <= e^{b m_pot}", true);
    auto& e_jensen = rep.add("moment_after_jensen", "E[(int e^{-b P}) e^{2 b H / N}] <= e^{b m_pot}", true);
    auto& e_prob = rep.add("probabilistic_bound", "E[int e^{-b P}] <= e^{b m_pot} e^{-2 b B(N) / N}", true);
    auto& e_main = rep.add("exponential_moment_l1", "E[e^{b ||P||_1 / 2}] <= e^{b m_pot} e^{-2 b B(N) / N} + 1", true);
    auto& e_tail = rep.add("fluctuation_tail", "P(|<phi,mu_X>| >= L ||Lap phi||) <= e^{b (m_pot - 2B/N - L/2)} + e^{-b L / 2}", true);

    auto flag = [&](const AuditCheck& c, const TorusAuditRecord& r) {
        if (violation && violation->check.empty() && !c.pass()) {
            violation->check = c.name;
            violation->chain = r.chain;
            violation->sweep = r.sweep;
            violation->positions = r.positions;
        }
    };

    std::vector<double> cond_c, cond_f, mp_c, mp_f, js_c, js_f, pr_c, pr_f, l1_c, l1_f, stat;
    const double lap = phi.laplacian_sup();
    for (const auto& r : recs) {
        const auto& F = r.fine;
        const auto& C = r.coarse;
        c_local.record(r.local_defect, 0.0, 1e-10 * std::max(1.0, std::abs(r.energy)), r.chain, r.sweep);
        flag(c_local, r);
        c_lower.record(-N * m, F.min_value, 1e-6 * N, r.chain, r.sweep);
        flag(c_lower, r);
        c_mcell.record(0.0, std::min(F.worst_mpot_margin, C.worst_mpot_margin), 1e-6, r.chain, r.sweep);
        flag(c_mcell, r);
        for (double lh : F.log_int_exp_hat) {
            c_mint.record(F.log_int_exp, beta * m + lh, 1e-6 * beta, r.chain, r.sweep);
        }
        flag(c_mint, r);
        double lmean = 0.0;
        {
            std::vector<double> bl;
            for (double l : r.local) bl.push_back(beta * l);
            lmean = detail::log_mean_exp(bl);
        }
        c_jensen_j.record(2.0 * beta * r.energy / N, lmean, detail::exact_tol(2.0 * beta * r.energy / N, lmean), r.chain, r.sweep);
        flag(c_jensen_j, r);
        c_cert.record(bound, r.energy, 1e-9, r.chain, r.sweep);
        flag(c_cert, r);
        c_cell.record(0.0, std::min(F.worst_cell_margin, C.worst_cell_margin), 1e-12, r.chain, r.sweep);
        flag(c_cell, r);
        c_jensen_neg.record(std::exp(-beta * F.neg), F.int_exp_neg, detail::exact_tol(std::exp(-beta * F.neg), F.int_exp_neg),
                            r.chain, r.sweep);
        flag(c_jensen_neg, r);
        double lhs = std::exp(0.5 * beta * F.l1) - 1.0;
        double rhs = std::exp(F.log_int_exp);
        c_chain.record(lhs, rhs, detail::exact_tol(lhs, rhs), r.chain, r.sweep);
        flag(c_chain, r);
        // l1_direct - l1 is the grid mean of P, which for a mean-zero g is the aliasing residual alone
        for (const auto* G : {&C, &F}) {
            int M = G == &C ? grid : 2 * grid;
            double residual = torus_grid_mean_residual(g, r.positions, M);
            c_meanzero.record(std::abs((G->l1_direct - G->l1) - residual), 0.0, 1e-6 * N, r.chain, r.sweep);
        }
        flag(c_meanzero, r);
        double dq = std::abs(F.l1 - C.l1);
        c_dual.record(std::abs(r.statistic), lap * F.l1, 3.0 * lap * dq + 1e-12, r.chain, r.sweep);
        flag(c_dual, r);

        std::vector<double> a_c, a_f, b_c, b_f;
        for (std::size_t j = 0; j < r.local.size(); ++j) {
            a_c.push_back(C.log_int_exp_hat[j] + beta * r.local[j]);
            a_f.push_back(F.log_int_exp_hat[j] + beta * r.local[j]);
            b_c.push_back(C.log_int_exp + beta * r.local[j]);
            b_f.push_back(F.log_int_exp + beta * r.local[j]);
        }
        cond_c.push_back(detail::log_mean_exp(a_c));
        cond_f.push_back(detail::log_mean_exp(a_f));
        mp_c.push_back(detail::log_mean_exp(b_c));
        mp_f.push_back(detail::log_mean_exp(b_f));
        js_c.push_back(C.log_int_exp + 2.0 * beta * r.energy / N);
        js_f.push_back(F.log_int_exp + 2.0 * beta * r.energy / N);
        pr_c.push_back(C.log_int_exp);
        pr_f.push_back(F.log_int_exp);
        l1_c.push_back(0.5 * beta * C.l1);
        l1_f.push_back(0.5 * beta * F.l1);
        stat.push_back(std::abs(r.statistic));
    }

    auto expect = [](AuditCheck& c, std::span<const double> coarse, std::span<const double> fine, double log_rhs,
                     bool two_sided) {
        auto [lf, se] = detail::log_expectation(fine);
        double lc = detail::log_mean_exp(coarse);
        double tol = 3.0 * (se + std::abs(lf - lc));
        c.record(lf, log_rhs, tol);
        if (two_sided) c.record(-lf, -log_rhs, tol);
    };
    expect(e_cond, cond_c, cond_f, 0.0, true);
    expect(e_mpot, mp_c, mp_f, beta * m, false);
    expect(e_jensen, js_c, js_f, beta * m, false);
    expect(e_prob, pr_c, pr_f, beta * m - 2.0 * beta * bound / N, false);
    {
        double rhs = std::exp(beta * m - 2.0 * beta * bound / N) + 1.0;
        expect(e_main, l1_c, l1_f, std::log(rhs), false);
    }
    for (double k : {1.0, 2.0, 4.0}) {
        double L = k * (m - 2.0 * bound / N);
        double rhs = std::exp(beta * (m - 2.0 * bound / N - 0.5 * L)) + std::exp(-0.5 * beta * L);
        auto t = tail_probability(stat, L * lap);
        e_tail.record(t.probability, rhs, 3.0 * t.std_error);
    }
    if (violation && violation->check.empty())
        for (const auto& c : rep.checks)
            if (!c.pass() && !c.expectation)
                for (const auto& r : recs)
                    if (r.chain == c.worst_chain && r.sweep == c.worst_sweep) flag(c, r);
    return rep;
}

// ---------------------------------------------------------------------------
// Euclidean

/// Z_zeta = int e^{-zeta} dx over R^3 (zeta = 0 on the ball of volume 1/rho).
inline double zeta_partition(const EquilibriumMeasure& eq) {
    const double R = eq.radius();
    const double top = R + 14.0;
    const int n = 20000;  // Simpson panels
    const double h = (top - R) / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
        double r = R + i * h;
        double f = 4.0 * std::numbers::pi * r * r * std::exp(-eq.zeta_radial(r));
        double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        s += w * f;
    }
    return 1.0 / eq.density() + s * h / 3.0;
}

struct EuclideanAuditOptions {
    std::size_t n = 8;
    double beta = 1.0;
    RunOptions run{20000, 1000, 20};
    std::size_t chains = 1;
    int grid = 24;            // mu_V grid M (2M also evaluated)
    int lebesgue_grid = 32;   // Lebesgue grid over [-L, L]^3
    double half_width = 1.5;  // L
    std::uint64_t seed = 1;
    std::optional<TestFunction> phi;
    unsigned threads = 1;
};

struct EuclideanGridSample {
    double log_int_exp = 0.0;             // log int e^{-b P} dx (Lebesgue box)
    std::vector<double> log_int_exp_hat;  // log int e^{-b (P_j^ + V)} dx, per j
    double worst_pointwise = std::numeric_limits<double>::infinity();  // min (P + C1) - (P_j^ + V)
    double log_int_exp_mu = 0.0;          // log int e^{-b P} d mu_V
    double int_exp_neg_mu = 0.0;          // int e^{-b P_-} d mu_V
    double neg_mu = 0.0;                  // int P_- d mu_V
    double l1_mu = 0.0;                   // <zeta, mu_X> - 2 int P_- d mu_V
    double l1_mu_direct = 0.0;            // int |P| d mu_V
    double pairing = 0.0;                 // int P d mu_V (= <zeta, mu_X>)
    double worst_cell_margin = std::numeric_limits<double>::infinity();
    double lap_pairing = 0.0;             // <P mu_X, -Lap phi> by mu_V-grid quadrature / rho
    double smooth_error = 0.0;            // N (|e_V| + |e_field|): grid error on integrands with closed-form mu_V integrals
};

inline EuclideanGridSample euclidean_grid_sample(const EuclideanConfiguration& cfg, const EquilibriumMeasure& eq, double beta,
                                                 int M_mu, int M_leb, double L, const TestFunction* phi) {
    EuclideanGridSample s;
    const auto& xs = cfg.positions();
    const std::size_t n = xs.size();
    const double inf_v = eq.potential().lower_bound();
    {
        FieldGrid f = potential_field(cfg, eq, M_leb, FieldMeasure::lebesgue, L);
        s.log_int_exp = detail::log_integral_exp(f.values, f.weights, beta);
        std::vector<double> hat(f.size());
        const auto& g = cfg.model().kernel();
        for (std::size_t j = 0; j < n; ++j) {
            double vj = cfg.external(j);
            for (int a = 0; a < M_leb; ++a)
                for (int b = 0; b < M_leb; ++b)
                    for (int c = 0; c < M_leb; ++c) {
                        std::size_t id = f.index(a, b, c);
                        Vec3 x = f.center(a, b, c);
                        double r2 = norm2(x - xs[j]);
                        double gj = r2 == 0.0 ? singular_cell_integral(f.spacing) / std::pow(f.spacing, 3) : g(x - xs[j]);
                        hat[id] = f.values[id] - gj - vj;  // P_j^(x) + V(x)
                        s.worst_pointwise = std::min(s.worst_pointwise, (f.values[id] - inf_v) - hat[id]);
                    }
            s.log_int_exp_hat.push_back(detail::log_integral_exp(hat, f.weights, beta));
        }
    }
    FieldGrid f = potential_field(cfg, eq, M_mu, FieldMeasure::equilibrium);
    s.log_int_exp_mu = detail::log_integral_exp(f.values, f.weights, beta);
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (f.weights[i] <= 0.0) continue;
        double neg = std::min(f.values[i], 0.0);
        s.int_exp_neg_mu += f.weights[i] * std::exp(-beta * neg);
        s.pairing += f.weights[i] * f.values[i];
        s.worst_cell_margin = std::min(s.worst_cell_margin, std::exp(-beta * f.values[i]) - (std::exp(-beta * neg) - 1.0));
    }
    {
        double ev = -eq.mean_potential(), ef = -1.2 * eq.radius() * eq.radius();
        for (int a = 0; a < M_mu; ++a)
            for (int b = 0; b < M_mu; ++b)
                for (int c = 0; c < M_mu; ++c) {
                    std::size_t id = f.index(a, b, c);
                    if (f.weights[id] <= 0.0) continue;
                    Vec3 x = f.center(a, b, c);
                    ev += f.weights[id] * eq.potential()(x);
                    ef += f.weights[id] * eq.field(x);
                }
        s.smooth_error = static_cast<double>(n) * (std::abs(ev) + std::abs(ef));
    }
    s.neg_mu = negative_part_integral(f);
    s.l1_mu = l1_norm(f);
    s.l1_mu_direct = l1_norm_direct(f);
    if (phi) {
        for (int a = 0; a < M_mu; ++a)
            for (int b = 0; b < M_mu; ++b)
                for (int c = 0; c < M_mu; ++c) {
                    std::size_t id = f.index(a, b, c);
                    s.lap_pairing -= f.weights[id] * phi->laplacian(f.center(a, b, c)) * f.values[id] / eq.density();
                }
    }
    return s;
}

struct EuclideanAuditRecord {
    std::uint64_t chain = 0;
    std::uint64_t sweep = 0;
    std::vector<Vec3> positions;
    double energy = 0.0;
    double local_defect = 0.0;
    std::vector<double> local;  // l_j
    std::vector<double> v;      // V(x_j)
    std::vector<double> zeta;   // zeta(x_j)
    double zeta_stat = 0.0;
    double statistic = 0.0;
    EuclideanGridSample coarse, fine;
};

inline std::vector<EuclideanAuditRecord> collect_euclidean_records(const EquilibriumMeasure& eq,
                                                                   const EuclideanAuditOptions& opt) {
    std::vector<std::vector<EuclideanAuditRecord>> per_chain(opt.chains);
    const TestFunction* phi = opt.phi ? &*opt.phi : nullptr;
    parallel_for(opt.chains, opt.threads, [&](std::size_t c) {
        Rng init(opt.seed, 1000000 + c);
        auto start = uniform_ball_points(opt.n, eq.radius(), init);
        ChainState<EuclideanModel> chain{EuclideanConfiguration(quadratic_model(eq), std::move(start)), opt.beta,
                                         Rng(opt.seed, 2000000 + c), 0.1};
        run_chain(chain, opt.run, {}, c, [&](const ChainState<EuclideanModel>& st) {
            EuclideanConfiguration cfg = st.config;
            cfg.total_energy();
            EuclideanAuditRecord r;
            r.chain = c;
            r.sweep = st.sweep;
            r.positions = cfg.positions();
            r.energy = cfg.energy();
            r.local_defect = cfg.local_sum_defect();
            for (std::size_t j = 0; j < cfg.size(); ++j) {
                r.local.push_back(cfg.local_energy(j));
                r.v.push_back(cfg.external(j));
                r.zeta.push_back(eq.zeta(r.positions[j]));
            }
            r.zeta_stat = eq.zeta_statistic(r.positions);
            if (phi) r.statistic = linear_statistic(cfg, *phi);
            r.coarse = euclidean_grid_sample(cfg, eq, opt.beta, opt.grid, opt.lebesgue_grid, opt.half_width, phi);
            r.fine = euclidean_grid_sample(cfg, eq, opt.beta, 2 * opt.grid, 2 * opt.lebesgue_grid, opt.half_width, phi);
            per_chain[c].push_back(std::move(r));
        });
    });
    std::vector<EuclideanAuditRecord> all;
    for (auto& v : per_chain)
        for (auto& r : v) all.push_back(std::move(r));
    return all;
}

inline AuditReport evaluate_euclidean_audit(const std::vector<EuclideanAuditRecord>& recs, const EquilibriumMeasure& eq,
                                            double beta, const TestFunction* phi, AuditViolation* violation = nullptr) {
    AuditReport rep;
    rep.checks.reserve(32);
    rep.samples = recs.size();
    if (recs.empty()) return rep;
    const std::size_t n = recs.front().positions.size();
    const double N = static_cast<double>(n);
    const double C1 = -eq.potential().lower_bound();
    const double C2 = eq.zeta_minus_potential_sup();
    const double rho = eq.density();
    const double bound = regularized_lower_bound(eq, n);
    const double log_z = std::log(zeta_partition(eq));

    auto& c_local = rep.add("local_energy_sum", "H = 1/2 sum_j (l_j + 2 V(x_j))", false);
    auto& c_point = rep.add("local_field_pointwise", "P_j^(x) + V(x) <= P mu_X(x) + C1 at every cell and j", false);
    auto& c_jensen = rep.add("jensen_over_particles", "(1/N) sum_j e^{b(l_j + V_j) - zeta_j} >= exp((1/N) sum_j (b(l_j + V_j) - zeta_j))", false);
    auto& c_expand = rep.add("energy_expansion", "(1/N) sum_j (b(l_j+V_j) - zeta_j) = 2bH/N - b<V,mu>/N - <zeta,mu>/N", false);
    auto& c_like = rep.add("zeta_like_v", "... >= 2bH/N - (b+1)<zeta,mu>/N - C2 b", false);
    auto& c_reg = rep.add("regularized_ground_state", "H - N<zeta,mu_X> >= certified lower bound", false);
    auto& c_ln = rep.add("ground_state_step", "... >= (2b - (1+b)/N)<zeta,mu> - C2 b + 2b L_N / N", false);
    auto& c_beta = rep.add("temperature_step", "(2b - (1+b)/N)<zeta,mu> >= b<zeta,mu> for b >= 1/(N-1)", false);
    auto& c_dens = rep.add("density_bound", "int e^{-bP} dx >= (1/rho) int e^{-bP} d mu_V", false);
    auto& c_cell = rep.add("negative_part_cell", "e^{-bP(x)} >= e^{-bP_-(x)} - 1 at every mu_V cell", false);
    auto& c_jneg = rep.add("jensen_negative_part", "int e^{-bP_-} d mu_V >= exp(-b int P_- d mu_V)", false);
    auto& c_self = rep.add("self_adjointness", "<P mu_X, mu_V> = <zeta, mu_X>", false);
    auto& c_l1 = rep.add("l1_identity", "||P||_{L1(mu_V)} = <zeta,mu_X> - 2 int P_- d mu_V", false);
    auto& c_partition = rep.add("l1_partition_bound", "int e^{-bP} dx >= (1/rho)(e^{b(||P||_{L1(mu_V)} - <zeta,mu>)/2} - 1)", false);
    auto& c_dual = rep.add("duality", "|<mu_X - N mu_V, phi>| <= ||P||_{L1(mu_V)} ||Lap phi||_inf / rho", false);
    auto& e_cond = rep.add("conditional_identity", "E[(int e^{-b(P_j^ + V)}) e^{b(l_j + V_j) - zeta_j}] <= Z_zeta", true);
    auto& e_repl = rep.add("moment_after_replacement", "E[(int e^{-bP}) e^{b(l_j+V_j) - zeta_j}] <= Z_zeta e^{b C1}", true);
    auto& e_prop = rep.add("exponential_moment_estimate", "E[(int e^{-bP}) e^{b<zeta,mu>}] <= Z_zeta e^{b(C1+C2) - 2bL_N/N}", true);
    auto& e_l1 = rep.add("l1_exponential_moment", "E[e^{b||P||_{L1(mu_V)}/2}] <= rho Z_zeta e^{b(C1+C2) - 2bL_N/N} + E[e^{b<zeta,mu>}]", true);

    auto flag = [&](const AuditCheck& c, const EuclideanAuditRecord& r) {
        if (violation && violation->check.empty() && !c.pass()) {
            violation->check = c.name;
            violation->chain = r.chain;
            violation->sweep = r.sweep;
            violation->positions = r.positions;
        }
    };

    std::vector<double> cond_c, cond_f, repl_c, repl_f, prop_c, prop_f, l1_c, l1_f, zmom;
    for (const auto& r : recs) {
        const auto& F = r.fine;
        const auto& C = r.coarse;
        double vsum = 0.0;
        for (double x : r.v) vsum += x;
        c_local.record(r.local_defect, 0.0, 1e-10 * std::max(1.0, std::abs(r.energy)), r.chain, r.sweep);
        flag(c_local, r);
        c_point.record(0.0, std::min(F.worst_pointwise, C.worst_pointwise), 1e-9, r.chain, r.sweep);
        flag(c_point, r);
        std::vector<double> terms;
        double avg = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            terms.push_back(beta * (r.local[j] + r.v[j]) - r.zeta[j]);
            avg += terms.back() / N;
        }
        double lme = detail::log_mean_exp(terms);
        c_jensen.record(avg, lme, detail::exact_tol(avg, lme), r.chain, r.sweep);
        flag(c_jensen, r);
        double expanded = 2.0 * beta * r.energy / N - beta * vsum / N - r.zeta_stat / N;
        c_expand.record(std::abs(avg - expanded), 0.0, detail::exact_tol(avg, expanded), r.chain, r.sweep);
        flag(c_expand, r);
        double like = 2.0 * beta * r.energy / N - (beta + 1.0) * r.zeta_stat / N - C2 * beta;
        c_like.record(like, expanded, detail::exact_tol(like, expanded), r.chain, r.sweep);
        flag(c_like, r);
        c_reg.record(bound, r.energy - N * r.zeta_stat, 1e-9, r.chain, r.sweep);
        flag(c_reg, r);
        double coef = 2.0 * beta - (1.0 + beta) / N;
        double ln_step = coef * r.zeta_stat - C2 * beta + 2.0 * beta * bound / N;
        c_ln.record(ln_step, like, detail::exact_tol(ln_step, like), r.chain, r.sweep);
        flag(c_ln, r);
        c_beta.record(beta * r.zeta_stat, coef * r.zeta_stat, detail::exact_tol(beta * r.zeta_stat, 0.0), r.chain, r.sweep);
        flag(c_beta, r);
        // The Lebesgue box and the mu_V grid are different quadratures: allow their refinement deltas.
        double lhs_d = F.log_int_exp_mu - std::log(rho);
        double qd = std::abs(F.log_int_exp - C.log_int_exp) + std::abs(F.log_int_exp_mu - C.log_int_exp_mu);
        c_dens.record(lhs_d, F.log_int_exp, 3.0 * qd + 1e-12, r.chain, r.sweep);
        flag(c_dens, r);
        c_cell.record(0.0, std::min(F.worst_cell_margin, C.worst_cell_margin), 1e-12, r.chain, r.sweep);
        flag(c_cell, r);
        double jl = std::exp(-beta * F.neg_mu);
        c_jneg.record(jl, F.int_exp_neg_mu, detail::exact_tol(jl, F.int_exp_neg_mu), r.chain, r.sweep);
        flag(c_jneg, r);
        // The mu_V weights carry an O(h^2) error that refinement deltas underestimate; measure it on V and g * mu_V.
        c_self.record(std::abs(F.pairing - r.zeta_stat), 0.0, 3.0 * (std::abs(F.pairing - C.pairing) + F.smooth_error) + 1e-9,
                      r.chain, r.sweep);
        flag(c_self, r);
        c_l1.record(std::abs(F.l1_mu - F.l1_mu_direct), 0.0,
                    3.0 * (std::abs(F.l1_mu - C.l1_mu) + std::abs(F.l1_mu_direct - C.l1_mu_direct) + F.smooth_error) + 1e-9,
                    r.chain, r.sweep);
        flag(c_l1, r);
        double partition_lhs = (std::exp(0.5 * beta * (F.l1_mu - r.zeta_stat)) - 1.0) / rho;
        c_partition.record(partition_lhs, std::exp(F.log_int_exp), std::exp(F.log_int_exp) * 3.0 * qd + 1e-12, r.chain, r.sweep);
        flag(c_partition, r);
        if (phi) {
            double rhs = F.l1_mu * phi->laplacian_sup() / rho;
            double dq = std::abs(F.l1_mu - C.l1_mu) * phi->laplacian_sup() / rho;
            c_dual.record(std::abs(r.statistic), rhs, 3.0 * dq + 1e-12, r.chain, r.sweep);
            flag(c_dual, r);
        }

        std::vector<double> a_c, a_f, b_c, b_f;
        for (std::size_t j = 0; j < n; ++j) {
            a_c.push_back(C.log_int_exp_hat[j] + terms[j]);
            a_f.push_back(F.log_int_exp_hat[j] + terms[j]);
            b_c.push_back(C.log_int_exp + terms[j]);
            b_f.push_back(F.log_int_exp + terms[j]);
        }
        cond_c.push_back(detail::log_mean_exp(a_c));
        cond_f.push_back(detail::log_mean_exp(a_f));
        repl_c.push_back(detail::log_mean_exp(b_c));
        repl_f.push_back(detail::log_mean_exp(b_f));
        prop_c.push_back(C.log_int_exp + beta * r.zeta_stat);
        prop_f.push_back(F.log_int_exp + beta * r.zeta_stat);
        l1_c.push_back(0.5 * beta * C.l1_mu);
        l1_f.push_back(0.5 * beta * F.l1_mu);
        zmom.push_back(beta * r.zeta_stat);
    }
    if (!phi) {
        rep.checks.erase(std::find_if(rep.checks.begin(), rep.checks.end(), [](const AuditCheck& c) { return c.name == "duality"; }));
        rep.coverage.erase(std::find(rep.coverage.begin(), rep.coverage.end(), "duality"));
    }
    auto expect = [](AuditCheck& c, std::span<const double> coarse, std::span<const double> fine, double log_rhs, double extra_se,
                     bool two_sided) {
        auto [lf, se] = detail::log_expectation(fine);
        double lc = detail::log_mean_exp(coarse);
        double tol = 3.0 * (se + extra_se + std::abs(lf - lc));
        c.record(lf, log_rhs, tol);
        if (two_sided) c.record(-lf, -log_rhs, tol);
    };
    auto find = [&](const char* name) -> AuditCheck& {
        return *std::find_if(rep.checks.begin(), rep.checks.end(), [&](const AuditCheck& c) { return c.name == name; });
    };
    (void)e_cond;
    (void)e_repl;
    (void)e_prop;
    (void)e_l1;
    // Z_zeta is dominated by the Gaussian tail far outside the droplet, which the chain rarely visits, so only the
    // upper side is statistically resolvable.
    expect(find("conditional_identity"), cond_c, cond_f, log_z, 0.0, false);
    expect(find("moment_after_replacement"), repl_c, repl_f, log_z + beta * C1, 0.0, false);
    expect(find("exponential_moment_estimate"), prop_c, prop_f, log_z + beta * (C1 + C2) - 2.0 * beta * bound / N, 0.0,
           false);
    {
        auto [lz, sez] = detail::log_expectation(zmom);
        double a = std::log(rho) + log_z + beta * (C1 + C2) - 2.0 * beta * bound / N;
        double rhs = std::max(a, lz) + std::log1p(std::exp(std::min(a, lz) - std::max(a, lz)));
        double weight = std::exp(lz - rhs);  // share of the zeta term in the right side
        expect(find("l1_exponential_moment"), l1_c, l1_f, rhs, weight * sez, false);
    }
    if (violation && violation->check.empty())
        for (const auto& c : rep.checks)
            if (!c.pass() && !c.expectation)
                for (const auto& r : recs)
                    if (r.chain == c.worst_chain && r.sweep == c.worst_sweep) flag(c, r);
    return rep;
}

}  // namespace coulomb
