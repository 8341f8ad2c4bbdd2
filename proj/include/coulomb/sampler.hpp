#pragma once

// Single-particle Markov chains targeting exp(-beta H): production random-walk
// Metropolis, and a validation heat-bath move that redraws one particle from
// its (grid-discretized) conditional Gibbs law.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <type_traits>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "diagnostics.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "observables.hpp"
#include "rng.hpp"
#include "system.hpp"

namespace coulomb {

template <typename Model>
struct ChainState {
    Configuration<Model> config;
    double beta = 1.0;
    Rng rng;
    double sigma = 0.1;
    std::uint64_t proposed = 0;
    std::uint64_t accepted = 0;
    std::uint64_t sweep = 0;

    double acceptance_rate() const {
        return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
    }
};

inline constexpr double target_acceptance = 0.35;

/// Metropolis acceptance probability min(1, exp(-beta delta)).
inline double acceptance_probability(double beta, double delta) {
    double a = -beta * delta;
    return a >= 0.0 ? 1.0 : std::exp(a);
}

/// One sweep = N single-particle proposals with a uniformly chosen particle.
/// Torus: wrapped Gaussian displacement; R^3: Gaussian displacement. A
/// proposal landing on another particle counts as a rejection.
template <typename Model>
std::uint64_t metropolis_sweep(ChainState<Model>& chain) {
    auto& cfg = chain.config;
    const std::size_t n = cfg.size();
    std::uint64_t acc = 0;
    for (std::size_t step = 0; step < n; ++step) {
        std::size_t j = chain.rng.index(n);
        const Vec3& x = cfg.position(j);
        Vec3 y{x[0] + chain.sigma * chain.rng.normal(), x[1] + chain.sigma * chain.rng.normal(),
               x[2] + chain.sigma * chain.rng.normal()};
        double u = chain.rng.uniform();
        ++chain.proposed;
        double delta;
        try {
            delta = cfg.delta_energy_move(j, y);
        } catch (const CoincidentPointsError&) {
            continue;
        }
        if (u < acceptance_probability(chain.beta, delta)) {
            cfg.apply_move(j, y);
            ++chain.accepted;
            ++acc;
        }
    }
    ++chain.sweep;
    return acc;
}

/// Conditional field P mu_{X,j^}(c) = sum_{k != j} g(c - x_k) at the centers
/// of an M^3 grid on T^3 (row-major).
inline std::vector<double> conditional_field(const TorusConfiguration& cfg, std::size_t j, int M) {
    if (M < 2) throw DomainError("heat-bath grid too coarse");
    if (j >= cfg.size()) throw DomainError("particle index out of range");
    const auto& g = cfg.model().kernel();
    const auto& xs = cfg.positions();
    std::vector<double> f(static_cast<std::size_t>(M) * M * M, 0.0);
    const double h = 1.0 / M;
    std::size_t id = 0;
    for (int a = 0; a < M; ++a)
        for (int b = 0; b < M; ++b)
            for (int c = 0; c < M; ++c, ++id) {
                Vec3 p{(a + 0.5) * h, (b + 0.5) * h, (c + 0.5) * h};
                double v = 0.0;
                for (std::size_t k = 0; k < xs.size(); ++k) {
                    if (k == j) continue;
                    Vec3 d = min_image(p - xs[k]);
                    v += norm2(d) == 0.0 ? std::numeric_limits<double>::infinity() : g(d);
                }
                f[id] = v;
            }
    return f;
}

/// Draw x_j from the discretized conditional law, density proportional to
/// exp(-beta P mu_{X,j^}) on the cells of an M^3 grid, uniform inside the
/// selected cell. Exponentials are taken after subtracting the grid minimum.
inline void heatbath_resample(ChainState<TorusModel>& chain, std::size_t j, int M) {
    std::vector<double> f = conditional_field(chain.config, j, M);
    double fmin = *std::min_element(f.begin(), f.end());
    std::vector<double> cdf(f.size());
    double total = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        total += std::isinf(f[i]) ? 0.0 : std::exp(-chain.beta * (f[i] - fmin));
        cdf[i] = total;
    }
    double u = chain.rng.uniform() * total;
    std::size_t cell = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    cell = std::min(cell, cdf.size() - 1);
    const double h = 1.0 / M;
    int a = static_cast<int>(cell / (static_cast<std::size_t>(M) * M));
    int b = static_cast<int>((cell / M) % M);
    int c = static_cast<int>(cell % M);
    Vec3 y{(a + chain.rng.uniform()) * h, (b + chain.rng.uniform()) * h, (c + chain.rng.uniform()) * h};
    ++chain.proposed;
    try {
        chain.config.apply_move(j, y);
        ++chain.accepted;
    } catch (const CoincidentPointsError&) {
    }
}

/// One heat-bath pass: every particle resampled once, in index order.
inline void heatbath_sweep(ChainState<TorusModel>& chain, int M) {
    for (std::size_t j = 0; j < chain.config.size(); ++j) heatbath_resample(chain, j, M);
    ++chain.sweep;
}

/// Both sides of E_cond[exp(beta P mu_{X,j^})] = 1 / int exp(-beta P mu_{X,j^})
/// under the grid-discretized conditional law.
struct ConditionalMomentCheck {
    double moment = 0.0;
    double inverse_partition = 0.0;
};

inline ConditionalMomentCheck conditional_exp_moment(const TorusConfiguration& cfg, std::size_t j, double beta, int M) {
    std::vector<double> f = conditional_field(cfg, j, M);
    const double w = 1.0 / static_cast<double>(f.size());
    double z = 0.0;
    for (double v : f) z += std::isinf(v) ? 0.0 : w * std::exp(-beta * v);
    double m = 0.0;
    for (double v : f) {
        if (std::isinf(v)) continue;
        double p = w * std::exp(-beta * v) / z;
        m += p * std::exp(beta * v);
    }
    return {m, 1.0 / z};
}

struct RunOptions {
    std::uint64_t sweeps = 1000;
    std::uint64_t burn_in = 100;
    std::uint64_t thin = 1;
    bool tune = true;
    double sigma_min = 1e-5;
    double sigma_max = 0.5;
    /// Caches are rebuilt from positions every this many sweeps, so a
    /// checkpoint taken at a multiple of it resumes bit-exactly.
    std::uint64_t refresh_every = 100;
};

struct TraceRow {
    std::uint64_t chain_id = 0;
    std::uint64_t sweep = 0;
    double energy = 0.0;
    std::vector<double> values;
    double acceptance = 0.0;
};

struct ChainRun {
    std::vector<TraceRow> trace;
    std::vector<ChainDiagnostics> diagnostics;  // one per observable
    double acceptance = 0.0;                    // post-burn-in
    double sigma = 0.0;                         // frozen post-burn-in scale
};

/// Robbins-Monro step on log sigma toward the target acceptance.
template <typename Model>
void tune_sigma(ChainState<Model>& chain, double sweep_acceptance, std::uint64_t t, const RunOptions& opt) {
    double gain = 1.0 / std::sqrt(1.0 + static_cast<double>(t));
    chain.sigma *= std::exp(gain * (sweep_acceptance - target_acceptance));
    chain.sigma = std::clamp(chain.sigma, opt.sigma_min, opt.sigma_max);
}

/// Run a chain from its current state. Tuning happens only during burn-in;
/// retained sweeps are those with (sweep - burn_in) divisible by thin, so the
/// trace has floor((sweeps - burn_in) / thin) rows. Deterministic given the
/// initial state. `on_sample` sees the chain at every retained sweep.
template <typename Model>
ChainRun run_chain(ChainState<Model>& chain, const RunOptions& opt, std::span<const TestFunction> observables,
                   std::uint64_t chain_id,
                   const std::type_identity_t<std::function<void(const ChainState<Model>&)>>& on_sample = {}) {
    if (!(opt.sweeps > opt.burn_in) || opt.thin < 1) throw DomainError("need sweeps > burn_in >= 0 and thin >= 1");
    if (opt.refresh_every < 1) throw DomainError("refresh interval must be positive");
    for (const auto& phi : observables) {
        if (phi.domain() != Model::domain) throw DomainError("observable domain does not match chain");
    }
    ChainRun run;
    const double n = static_cast<double>(chain.config.size());
    auto refresh = [&] {
        if (chain.sweep % opt.refresh_every == 0) chain.config.total_energy();
    };
    if (chain.sweep <= opt.burn_in) {
        while (chain.sweep < opt.burn_in) {
            std::uint64_t t = chain.sweep;
            std::uint64_t acc = metropolis_sweep(chain);
            if (opt.tune && n > 0) tune_sigma(chain, static_cast<double>(acc) / n, t, opt);
            refresh();
        }
        chain.proposed = 0;
        chain.accepted = 0;
    }
    while (chain.sweep < opt.sweeps) {
        metropolis_sweep(chain);
        refresh();
        if ((chain.sweep - opt.burn_in) % opt.thin != 0) continue;
        TraceRow row;
        row.chain_id = chain_id;
        row.sweep = chain.sweep;
        row.energy = chain.config.energy();
        for (const auto& phi : observables) row.values.push_back(linear_statistic(chain.config, phi));
        row.acceptance = chain.acceptance_rate();
        run.trace.push_back(std::move(row));
        if (on_sample) on_sample(chain);
    }
    run.acceptance = chain.acceptance_rate();
    run.sigma = chain.sigma;
    for (std::size_t o = 0; o < observables.size(); ++o) {
        std::vector<double> v;
        v.reserve(run.trace.size());
        for (const auto& r : run.trace) v.push_back(r.values[o]);
        run.diagnostics.push_back(diagnose({v}));
    }
    return run;
}

/// Bin index of the two-particle displacement x_1 - x_0 (wrapped to [0,1)^3)
/// on a bins^3 grid.
inline std::size_t displacement_bin(const Vec3& x0, const Vec3& x1, int bins) {
    Vec3 d = wrap_unit(x1 - x0);
    std::size_t id = 0;
    for (int k = 0; k < 3; ++k) {
        int i = std::min(bins - 1, static_cast<int>(d[k] * bins));
        id = id * static_cast<std::size_t>(bins) + static_cast<std::size_t>(i);
    }
    return id;
}

/// Law of the N = 2 torus displacement, density proportional to e^{-beta g},
/// by midpoint quadrature on an M^3 grid aggregated into bins^3 bins
/// (M a multiple of bins).
inline std::vector<double> pair_displacement_law(const TorusKernel& g, double beta, int M, int bins) {
    if (bins < 1 || M % bins != 0) throw DomainError("quadrature grid must refine the histogram bins");
    std::vector<double> p(static_cast<std::size_t>(bins) * bins * bins, 0.0);
    const int r = M / bins;
    double total = 0.0;
    for (int a = 0; a < M; ++a)
        for (int b = 0; b < M; ++b)
            for (int c = 0; c < M; ++c) {
                double w = std::exp(-beta * g(Vec3{(a + 0.5) / M, (b + 0.5) / M, (c + 0.5) / M}));
                std::size_t id = (static_cast<std::size_t>(a / r) * bins + b / r) * bins + c / r;
                p[id] += w;
                total += w;
            }
    for (double& v : p) v /= total;
    return p;
}

/// Total-variation distance between two probability vectors.
inline double total_variation(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw DomainError("distributions differ in support size");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
}

/// Column o of a trace.
inline std::vector<double> trace_column(const std::vector<TraceRow>& trace, std::size_t o) {
    std::vector<double> v;
    v.reserve(trace.size());
    for (const auto& r : trace) v.push_back(r.values.at(o));
    return v;
}

}  // namespace coulomb
