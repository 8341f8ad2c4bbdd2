#pragma once

// Ground states: simulated annealing followed by coordinate pattern descent,
// the smearing lower-bound certificate on T^3, and the regularized Euclidean
// ground state min_X H(X) - N<zeta, mu_X>.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "equilibrium.hpp"
#include "errors.hpp"
#include "kernel.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "system.hpp"

namespace coulomb {

/// H - N<zeta, mu_X> written as a Euclidean model whose external potential is
/// V - zeta; Configuration then caches the regularized objective directly.
class RegularizedModel {
public:
    static constexpr Domain domain = Domain::euclidean;

    explicit RegularizedModel(const EquilibriumMeasure& eq) : eq_(eq), v_(eq.potential()) {}

    double pair(const Vec3& a, const Vec3& b) const { return g_(a - b); }
    double external(const Vec3& x) const { return v_(x) - eq_.zeta(x); }
    Vec3 canonical(const Vec3& x) const { return x; }
    double separation2(const Vec3& a, const Vec3& b) const { return norm2(a - b); }
    const FreeKernel& kernel() const { return g_; }

private:
    EquilibriumMeasure eq_;
    ConfiningPotential v_;
    FreeKernel g_{3};
};

struct AnnealOptions {
    /// Annealing proposals; 0 picks 3000 N.
    std::uint64_t budget = 0;
    /// Descent trial moves; 0 picks 12000 N. Hitting it sets budget_exhausted.
    std::uint64_t descent_budget = 0;
    int stages = 40;
    /// The schedule runs geometrically from beta_start N^{1/3} to beta_end N^{1/3}.
    double beta_start = 0.1;
    double beta_end = 50.0;
    double initial_sigma = 0.1;
    double descent_step = 0.02;
    double descent_tol = 1e-7;
};

struct Minimum {
    std::vector<Vec3> positions;
    double energy = 0.0;
    bool budget_exhausted = false;
    std::uint64_t moves = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::uint64_t effective_budget(std::size_t n, const AnnealOptions& opt) {
    return opt.budget > 0 ? opt.budget : 3000 * static_cast<std::uint64_t>(std::max<std::size_t>(n, 1));
}

inline std::uint64_t effective_descent_budget(std::size_t n, const AnnealOptions& opt) {
    return opt.descent_budget > 0 ? opt.descent_budget : 12000 * static_cast<std::uint64_t>(std::max<std::size_t>(n, 1));
}

/// Per-particle compass search with step expansion on success and halving on
/// failure. Returns false when the move budget ran out first.
template <typename Model>
bool pattern_descent(Configuration<Model>& cfg, const AnnealOptions& opt, std::uint64_t& moves, std::uint64_t budget) {
    const std::size_t n = cfg.size();
    std::vector<double> step(n, opt.descent_step);
    while (true) {
        double largest = *std::max_element(step.begin(), step.end());
        if (largest < opt.descent_tol) return true;
        for (std::size_t j = 0; j < n; ++j) {
            if (step[j] < opt.descent_tol) continue;
            bool improved = false;
            for (int a = 0; a < 3; ++a) {
                for (int sgn : {1, -1}) {
                    if (moves >= budget) return false;
                    ++moves;
                    Vec3 y = cfg.position(j);
                    y[a] += sgn * step[j];
                    double d;
                    try {
                        d = cfg.delta_energy_move(j, y);
                    } catch (const CoincidentPointsError&) {
                        continue;
                    }
                    if (d < 0.0) {
                        cfg.apply_move(j, y);
                        improved = true;
                        break;
                    }
                }
            }
            step[j] = improved ? std::min(2.0 * step[j], opt.descent_step) : 0.5 * step[j];
        }
    }
}

}  // namespace detail

/// Anneal-then-descend from the given start. The returned energy is the
/// cached model energy of the final configuration; see torus_energy_direct
/// for the table-free value.
template <typename Model>
Minimum anneal(Configuration<Model> cfg, const AnnealOptions& opt, Rng rng) {
    const std::size_t n = cfg.size();
    if (n == 0) throw DomainError("need at least one particle");
    if (opt.stages < 1 || !(opt.beta_start > 0.0) || !(opt.beta_end >= opt.beta_start))
        throw DomainError("invalid annealing schedule");
    const std::uint64_t anneal_moves = detail::effective_budget(n, opt);
    Minimum out;
    cfg.total_energy();
    if (n == 1 && Model::domain == Domain::torus) {
        out.positions = cfg.positions();
        out.energy = 0.0;
        return out;
    }
    const double scale = std::cbrt(static_cast<double>(n));
    const std::uint64_t sweeps_per_stage = std::max<std::uint64_t>(1, anneal_moves / (n * opt.stages));
    ChainState<Model> chain{std::move(cfg), opt.beta_start * scale, std::move(rng), opt.initial_sigma};
    RunOptions tuning;
    for (int s = 0; s < opt.stages; ++s) {
        double f = opt.stages == 1 ? 1.0 : static_cast<double>(s) / (opt.stages - 1);
        chain.beta = scale * opt.beta_start * std::pow(opt.beta_end / opt.beta_start, f);
        for (std::uint64_t k = 0; k < sweeps_per_stage && out.moves + n <= anneal_moves; ++k) {
            std::uint64_t acc = metropolis_sweep(chain);
            out.moves += n;
            tune_sigma(chain, static_cast<double>(acc) / static_cast<double>(n), k, tuning);
        }
        chain.config.total_energy();
    }
    bool converged =
        detail::pattern_descent(chain.config, opt, out.moves, out.moves + detail::effective_descent_budget(n, opt));
    out.energy = chain.config.total_energy();
    out.positions = chain.config.positions();
    out.budget_exhausted = !converged;
    return out;
}

/// Torus energy from direct Ewald sums (no table).
inline double torus_energy_direct(const TorusKernel& g, std::span<const Vec3> xs) {
    double h = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = i + 1; j < xs.size(); ++j) h += g.eval_direct(xs[i] - xs[j]);
    return h;
}

/// Torus minimization from a perturbed lattice; the reported energy uses the
/// direct Ewald sum so it is an upper bound on the true minimum free of table error.
inline Minimum minimize_torus_energy(std::shared_ptr<const TorusKernel> g, std::size_t n, std::uint64_t seed,
                                     const AnnealOptions& opt = {}) {
    Rng rng(seed, 0);
    auto start = perturbed_lattice(n, 0.5, rng);
    TorusModel model(g);
    Minimum m = anneal(Configuration<TorusModel>(model, std::move(start)), opt, rng.split(1));
    m.energy = torus_energy_direct(*g, m.positions);
    m.seed = seed;
    return m;
}

/// Independent restarts in parallel; the minimum wins, ties go to the
/// earlier seed so the result is independent of scheduling.
template <typename F>
Minimum best_of_restarts(std::span<const std::uint64_t> seeds, unsigned threads, F&& run_one) {
    if (seeds.empty()) throw DomainError("need at least one seed");
    std::vector<Minimum> results(seeds.size());
    parallel_for(seeds.size(), threads, [&](std::size_t i) { results[i] = run_one(seeds[i]); });
    std::size_t best = 0;
    for (std::size_t i = 1; i < results.size(); ++i)
        if (results[i].energy < results[best].energy) best = i;
    Minimum m = std::move(results[best]);
    for (const auto& r : results) m.budget_exhausted = m.budget_exhausted || r.budget_exhausted;
    return m;
}

inline Minimum minimize_torus_energy(std::shared_ptr<const TorusKernel> g, std::size_t n,
                                     std::span<const std::uint64_t> seeds, const AnnealOptions& opt = {},
                                     unsigned threads = 1) {
    return best_of_restarts(seeds, threads, [&](std::uint64_t s) { return minimize_torus_energy(g, n, s, opt); });
}

// ---------------------------------------------------------------------------
// Certificate

struct Certificate {
    std::size_t n = 0;
    double r = 0.0;
    double self_energy = 0.0;  // S(r)
    double c_sub = 0.0;        // includes the safety factor
    double bound = 0.0;        // B(N)
    double h_opt = std::numeric_limits<double>::quiet_NaN();
    bool budget_exhausted = false;

    double scaled_bound() const { return bound / std::pow(static_cast<double>(n), 4.0 / 3.0); }
    double scaled_h_opt() const { return h_opt / std::pow(static_cast<double>(n), 4.0 / 3.0); }
};

inline constexpr double c_sub_safety = 2.0;

/// max over an M^3 grid of cell centers of (g*gamma_r*gamma_r - g)(x) / r^2.
inline double subharmonic_ratio(const TorusKernel& g, double r, int M = 24) {
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < M; ++j)
            for (int k = 0; k < M; ++k) {
                Vec3 x{(i + 0.5) / M, (j + 0.5) / M, (k + 0.5) / M};
                best = std::max(best, (g.smeared(x, r) - g(x)) / (r * r));
            }
    return best;
}

/// Grid-measured C_sub over the radii {r, r/2, 2r} that lie in (0, 1/2],
/// times the safety factor.
inline double measure_c_sub(const TorusKernel& g, double r, int M = 24) {
    double c = 0.0;
    for (double rr : {r, 0.5 * r, 2.0 * r})
        if (rr > 0.0 && rr <= 0.5) c = std::max(c, subharmonic_ratio(g, rr, M));
    return c_sub_safety * c;
}

/// Smearing lower bound for min H_N on T^3 with r = N^{-1/3}:
/// 0 <= sum_{i,j} (g*gamma_r*gamma_r)(x_i - x_j) <= 2H + N^2 C r^2 + N S(r).
inline Certificate certify_lower_bound(const TorusKernel& g, std::size_t n, int grid = 24) {
    if (n < 1) throw DomainError("need at least one particle");
    Certificate c;
    c.n = n;
    double N = static_cast<double>(n);
    c.r = std::min(0.5, 1.0 / std::cbrt(N));
    c.self_energy = g.smeared_self_energy(c.r);
    c.c_sub = measure_c_sub(g, c.r, grid);
    c.bound = -0.5 * (c.c_sub * N * N * c.r * c.r + N * c.self_energy);
    return c;
}

/// Terms of the certificate chain evaluated on one configuration.
struct CertificateAudit {
    double spectral_energy = 0.0;   // <gamma_r mu_X, g * gamma_r mu_X> from Fourier modes
    double real_space_energy = 0.0; // sum_{i,j} (g*gamma_r*gamma_r)(x_i - x_j)
    double smeared_pairs = 0.0;     // sum_{i != j} (g*gamma_r*gamma_r)(x_i - x_j)
    double pairs = 0.0;             // sum_{i != j} g(x_i - x_j) = 2H
    double pair_slack = 0.0;        // pairs + N^2 C r^2 - smeared_pairs
    double bound_slack = 0.0;       // H - B(N)
};

/// Spectral smeared energy with |xi|_inf <= K; K = 32 matches a 64^3 grid.
inline double smeared_energy_spectral(std::span<const Vec3> xs, double r, int K = 32) {
    const int W = 2 * K + 1;
    const double tau = 2.0 * std::numbers::pi;
    std::vector<std::complex<double>> rho(static_cast<std::size_t>(W) * W * W, 0.0);
    std::vector<std::complex<double>> ex(W), ey(W), ez(W);
    for (const auto& x : xs) {
        for (int m = -K; m <= K; ++m) {
            ex[m + K] = std::polar(1.0, -tau * m * x[0]);
            ey[m + K] = std::polar(1.0, -tau * m * x[1]);
            ez[m + K] = std::polar(1.0, -tau * m * x[2]);
        }
        std::size_t idx = 0;
        for (int a = 0; a < W; ++a)
            for (int b = 0; b < W; ++b) {
                std::complex<double> ab = ex[a] * ey[b];
                for (int c = 0; c < W; ++c) rho[idx++] += ab * ez[c];
            }
    }
    double sum = 0.0;
    std::size_t idx = 0;
    for (int a = -K; a <= K; ++a)
        for (int b = -K; b <= K; ++b)
            for (int c = -K; c <= K; ++c, ++idx) {
                if (a == 0 && b == 0 && c == 0) continue;
                double gh = detail::ball_transform(tau * std::sqrt(double(a * a + b * b + c * c)), r);
                sum += TorusKernel::fourier_coefficient(a, b, c) * gh * gh * std::norm(rho[idx]);
            }
    return sum;
}

inline CertificateAudit audit_certificate(const TorusKernel& g, const Certificate& cert, std::span<const Vec3> xs,
                                          int K = 32) {
    CertificateAudit a;
    const double N = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = i + 1; j < xs.size(); ++j) {
            Vec3 d = xs[i] - xs[j];
            a.smeared_pairs += 2.0 * g.smeared(d, cert.r);
            a.pairs += 2.0 * g(d);
        }
    a.real_space_energy = a.smeared_pairs + N * cert.self_energy;
    a.spectral_energy = smeared_energy_spectral(xs, cert.r, K);
    a.pair_slack = a.pairs + N * N * cert.c_sub * cert.r * cert.r - a.smeared_pairs;
    a.bound_slack = 0.5 * a.pairs - cert.bound;
    return a;
}

// ---------------------------------------------------------------------------
// Euclidean regularized ground state

/// Analytic lower bound for H - N<zeta, mu_X> with quadratic V in d = 3.
/// Smearing each charge over radius r costs at most N 3kappa/(5r) in self
/// energy and N^2 (3/10) r^2 in the background overlap; r = R N^{-1/3} gives
/// -(9/10) R^2 N^{4/3}, which is attained at N = 1.
inline double regularized_lower_bound(const EquilibriumMeasure& eq, std::size_t n) {
    double R = eq.radius();
    return -0.9 * R * R * std::pow(static_cast<double>(n), 4.0 / 3.0);
}

/// The same bound written as -C N^{4/3} ||mu_V||_inf^{1/3}; returns C.
inline double regularized_bound_constant(const EquilibriumMeasure& eq) {
    return 0.9 * eq.radius() * eq.radius() / std::cbrt(eq.density());
}

/// Anneals on H (confinement keeps the chain bounded), then descends on the
/// regularized objective. Since zeta >= 0 with equality on the droplet, the
/// two objectives agree wherever the minimizer sits inside it.
inline Minimum regularized_ground_state(const EquilibriumMeasure& eq, std::size_t n, std::uint64_t seed,
                                        const AnnealOptions& opt = {}) {
    Rng rng(seed, 0);
    auto start = uniform_ball_points(n, eq.radius(), rng);
    Minimum hot = anneal(Configuration<EuclideanModel>(quadratic_model(eq), std::move(start)), opt, rng.split(1));
    Configuration<RegularizedModel> cfg(RegularizedModel(eq), hot.positions);
    cfg.total_energy();
    std::uint64_t moves = hot.moves;
    bool ok = detail::pattern_descent(cfg, opt, moves, moves + detail::effective_descent_budget(n, opt));
    Minimum m;
    m.energy = cfg.total_energy();
    m.positions = cfg.positions();
    m.moves = moves;
    m.budget_exhausted = hot.budget_exhausted || !ok;
    m.seed = seed;
    return m;
}

inline Minimum regularized_ground_state(const EquilibriumMeasure& eq, std::size_t n,
                                        std::span<const std::uint64_t> seeds, const AnnealOptions& opt = {},
                                        unsigned threads = 1) {
    return best_of_restarts(seeds, threads, [&](std::uint64_t s) { return regularized_ground_state(eq, n, s, opt); });
}

}  // namespace coulomb
